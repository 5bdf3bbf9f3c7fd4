// Command-line surface of the toolkit: generate / train / evaluate /
// neighbors / ablate. All tables are tab-separated with a header row; all
// randomness flows from --seed via labeled stream splitting; outputs are
// byte-identical across reruns except the single timestamped manifest line.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bptf/bptf.hpp"

namespace fs = std::filesystem;

namespace {

/** Command-level misuse that CLI11 cannot express declaratively. */
class usage_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string now_iso8601() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<std::size_t> parse_mode_sizes(const std::string& spec) {
    std::vector<std::size_t> sizes;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = spec.find(',', start);
        const std::string tok =
            spec.substr(start, comma == std::string::npos ? comma : comma - start);
        std::size_t n = 0;
        if (!bptf::details::parse_size(tok, n) || n == 0)
            throw usage_error("--modes: bad mode size '" + tok + "'");
        sizes.push_back(n);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (sizes.size() < 2) throw usage_error("--modes: need at least two comma-separated sizes");
    return sizes;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw bptf::parse_error("cannot open '" + path.string() + "' for writing");
    return out;
}

struct CommonTrainArgs {
    std::string config_path;
    std::string data_path;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    bool seed_set = false;
    bool threads_set = false;
    bool no_reweight = false;
    std::size_t k_override = 0;
    std::size_t iters_override = 0;
};

bptf::ModelConfig resolve_config(const CommonTrainArgs& a) {
    bptf::ModelConfig cfg;
    if (!a.config_path.empty()) cfg = bptf::load_config(a.config_path);
    if (a.seed_set) cfg.seed = a.seed;
    if (a.threads_set) cfg.threads = a.threads;
    if (a.no_reweight) cfg.reweight = false;
    if (a.k_override > 0) cfg.k = a.k_override;
    if (a.iters_override > 0) cfg.max_iters = a.iters_override;
    cfg.validate();
    return cfg;
}

void write_manifest(const fs::path& path, const std::string& command,
                    const std::string& model, const std::string& data,
                    const bptf::ModelConfig& cfg) {
    std::ofstream out = open_out(path);
    out << "# generated:\t" << now_iso8601() << "\n";
    out << "command\t" << command << "\n";
    out << "model\t" << model << "\n";
    out << "data\t" << data << "\n";
    bptf::details::write_config(out, cfg);
}

int cmd_generate(const std::string& modes_spec, std::size_t k, double alpha, double beta,
                 std::uint64_t seed, const std::string& out_dir) {
    const std::vector<std::size_t> sizes = parse_mode_sizes(modes_spec);
    const bptf::SyntheticTruth truth = bptf::generate(sizes, k, alpha, beta, seed);

    fs::create_directories(out_dir);
    const fs::path tensor_path = fs::path(out_dir) / "tensor.tsv";
    const fs::path truth_path = fs::path(out_dir) / "truth.tsv";
    bptf::save_tensor(tensor_path.string(), truth.tensor);
    bptf::save_truth(truth_path.string(), truth);

    double cells = 1.0;
    for (std::size_t n : sizes) cells *= static_cast<double>(n);
    std::cout << "key\tvalue\n";
    std::cout << "entries\t" << truth.tensor.n_entries() << "\n";
    std::cout << "density\t" << fmt(static_cast<double>(truth.tensor.n_entries()) / cells) << "\n";
    std::cout << "tensor\t" << tensor_path.string() << "\n";
    std::cout << "truth\t" << truth_path.string() << "\n";
    return 0;
}

int cmd_train(const std::string& model, const CommonTrainArgs& args, const std::string& out_dir) {
    const bptf::ModelKind kind = bptf::model_kind_from_string(model);
    const bptf::ModelConfig cfg = resolve_config(args);
    const bptf::SparseCountTensor train = bptf::load_tensor(args.data_path);

    bptf::Checkpoint ck;
    ck.model = model;
    ck.cfg = cfg;
    ck.ybar = bptf::most_frequent_value(train);
    ck.mode_sizes = train.mode_sizes();
    std::vector<double> trace;
    bool converged = false;
    std::size_t iterations = 0;

    if (kind == bptf::ModelKind::vae) {
        const bptf::FitResult fitted = bptf::fit(train, cfg);
        ck.state = fitted.state;
        ck.mean_factors = fitted.mean_factors;
        ck.bank = fitted.bank;
        trace = fitted.report.elbo_trace;
        converged = fitted.report.converged;
        iterations = fitted.report.iterations_run;
    } else {
        const bptf::GibbsResult fitted = bptf::gibbs_fit(train, cfg);
        ck.state = fitted.state;
        ck.mean_factors = fitted.mean_factors;
        trace = fitted.logprob_trace;
        iterations = trace.size();
    }

    fs::create_directories(out_dir);
    const fs::path ck_path = fs::path(out_dir) / "checkpoint.tsv";
    bptf::save_checkpoint(ck_path.string(), ck);
    bptf::save_trace((fs::path(out_dir) / "trace.tsv").string(), trace);
    write_manifest(fs::path(out_dir) / "manifest.txt", "train", model, args.data_path, cfg);

    std::cout << "key\tvalue\n";
    std::cout << "model\t" << model << "\n";
    std::cout << "iterations\t" << iterations << "\n";
    std::cout << "converged\t" << (converged ? "true" : "false") << "\n";
    std::cout << "final_objective\t" << fmt(trace.back()) << "\n";
    std::cout << "checkpoint\t" << ck_path.string() << "\n";
    return 0;
}

int cmd_evaluate_checkpoint(const std::string& ck_path, const std::string& test_path, bool round) {
    const bptf::Checkpoint ck = bptf::load_checkpoint(ck_path);
    const bptf::SparseCountTensor test = bptf::load_tensor(test_path);
    if (test.mode_sizes() != ck.mode_sizes) {
        std::string msg = "dimension mismatch: checkpoint modes";
        for (std::size_t n : ck.mode_sizes) msg += " " + std::to_string(n);
        msg += " vs tensor modes";
        for (std::size_t n : test.mode_sizes()) msg += " " + std::to_string(n);
        throw std::invalid_argument(msg);
    }
    const bptf::MetricsReport r = bptf::evaluate_model(test, ck.mean_factors, round);
    std::cout << "metric\tvalue\n";
    std::cout << "mae\t" << fmt(r.mae) << "\n";
    std::cout << "holdout_ll\t" << fmt(r.holdout_ll) << "\n";
    std::cout << "n_test\t" << r.n_test << "\n";
    return 0;
}

int cmd_evaluate_cv(const std::string& data_path, const std::string& grid_path, std::size_t folds,
                    const std::string& model, std::uint64_t seed, bool threads_set,
                    std::size_t threads) {
    const bptf::ModelKind kind = bptf::model_kind_from_string(model);
    const bptf::SparseCountTensor train = bptf::load_tensor(data_path);
    const std::vector<bptf::GridCell> grid = bptf::load_grid(grid_path);
    std::vector<bptf::ModelConfig> cfgs;
    for (const bptf::GridCell& cell : grid) {
        bptf::ModelConfig cfg = cell.cfg;
        if (threads_set) cfg.threads = threads;
        cfg.validate();
        cfgs.push_back(cfg);
    }

    const bptf::CvResult cv = bptf::cross_validate(train, cfgs, folds, seed, kind);

    std::cout << "cell";
    for (const auto& [key, value] : grid.front().assignment) std::cout << "\t" << key;
    std::cout << "\tmean_val_mae";
    for (std::size_t f = 0; f < folds; ++f) std::cout << "\tfold_" << f;
    std::cout << "\n";
    for (std::size_t c = 0; c < cv.cells.size(); ++c) {
        std::cout << c;
        for (const auto& [key, value] : grid[c].assignment) std::cout << "\t" << value;
        std::cout << "\t" << fmt(cv.cells[c].mean_mae);
        for (double v : cv.cells[c].fold_mae) std::cout << "\t" << fmt(v);
        std::cout << "\n";
    }
    std::cout << "selected\t" << cv.best_index << "\n";
    return 0;
}

int cmd_neighbors(const std::string& ck_path, std::size_t mode, bool have_entity,
                  std::size_t entity, bool all, std::size_t k, const std::string& incidence_path,
                  double min_df) {
    if (have_entity == all) throw usage_error("specify exactly one of --entity or --all");
    const bptf::Checkpoint ck = bptf::load_checkpoint(ck_path);
    if (mode >= ck.mean_factors.size())
        throw std::invalid_argument("--mode " + std::to_string(mode) + " out of range (" +
                                    std::to_string(ck.mean_factors.size()) + " modes)");
    const bptf::Matrix& factors = ck.mean_factors[mode];

    std::unique_ptr<bptf::DocumentIncidence> inc;
    if (!incidence_path.empty())
        inc = std::make_unique<bptf::DocumentIncidence>(bptf::load_incidence(incidence_path));

    if (have_entity) {
        const std::vector<std::size_t> list = bptf::top_k_neighbors(factors, entity, k);
        std::cout << "rank\tentity\tdistance" << (inc ? "\tnpmi" : "") << "\n";
        for (std::size_t r = 0; r < list.size(); ++r) {
            const double d = (factors.row(static_cast<Eigen::Index>(list[r])) -
                              factors.row(static_cast<Eigen::Index>(entity)))
                                 .norm();
            std::cout << r << "\t" << list[r] << "\t" << fmt(d);
            if (inc) std::cout << "\t" << fmt(inc->npmi(entity, list[r]));
            std::cout << "\n";
        }
        if (inc) {
            const bptf::CoherenceReport rep = bptf::coherence_pmi({list}, *inc, min_df);
            std::cout << "# avg_npmi\t"
                      << (rep.entities.front().eligible ? fmt(rep.entities.front().avg_npmi)
                                                        : "n/a")
                      << "\n";
        }
        return 0;
    }

    // --all: per-probe coherence table; needs the incidence source.
    if (!inc) throw usage_error("--all requires --incidence");
    std::vector<std::vector<std::size_t>> lists;
    for (std::size_t s = 0; s < static_cast<std::size_t>(factors.rows()); ++s)
        lists.push_back(bptf::top_k_neighbors(factors, s, k));
    const bptf::CoherenceReport rep = bptf::coherence_pmi(lists, *inc, min_df);
    std::cout << "entity\tavg_npmi\n";
    for (const bptf::EntityCoherence& e : rep.entities)
        if (e.eligible) std::cout << e.probe << "\t" << fmt(e.avg_npmi) << "\n";
    std::cout << "# eligible\t" << rep.n_eligible << "/" << rep.entities.size() << "\n";
    std::cout << "# corpus_avg\t" << (rep.n_eligible > 0 ? fmt(rep.corpus_avg) : "n/a") << "\n";
    return 0;
}

int cmd_ablate(const CommonTrainArgs& args, const std::string& test_path,
               const std::string& out_dir) {
    const bptf::ModelConfig cfg = resolve_config(args);
    const bptf::SparseCountTensor train = bptf::load_tensor(args.data_path);
    const bptf::SparseCountTensor test = bptf::load_tensor(test_path);
    if (test.mode_sizes() != train.mode_sizes())
        throw std::invalid_argument("dimension mismatch between --data and --test tensors");

    const bptf::AblationReport rep = bptf::ablate_reweighting(train, test, cfg);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        bptf::save_trace((fs::path(out_dir) / "trace_reweighted.tsv").string(),
                         rep.trace_reweighted);
        bptf::save_trace((fs::path(out_dir) / "trace_uniform.tsv").string(), rep.trace_uniform);
    }
    std::cout << "arm\tmae\tholdout_ll\tn_test\n";
    std::cout << "reweighted\t" << fmt(rep.reweighted.mae) << "\t" << fmt(rep.reweighted.holdout_ll)
              << "\t" << rep.reweighted.n_test << "\n";
    std::cout << "uniform\t" << fmt(rep.uniform.mae) << "\t" << fmt(rep.uniform.holdout_ll) << "\t"
              << rep.uniform.n_test << "\n";
    std::cout << "mae_delta\t" << fmt(rep.mae_delta) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian Poisson tensor factorization toolkit"};
    app.require_subcommand(1);

    // generate
    std::string g_modes, g_out;
    std::size_t g_k = 0;
    double g_alpha = 2.0, g_beta = 0.25;
    std::uint64_t g_seed = 1;
    CLI::App* gen = app.add_subcommand("generate", "Generate a synthetic tensor with known truth");
    gen->add_option("--modes", g_modes, "Comma-separated mode sizes, e.g. 100,100,100")
        ->required();
    gen->add_option("--k", g_k, "Number of true latent factors")->required();
    gen->add_option("--alpha", g_alpha, "Hyper-prior shape (default 2)");
    gen->add_option("--beta", g_beta, "Hyper-prior scale (default 0.25)");
    gen->add_option("--seed", g_seed, "Random seed (default 1)");
    gen->add_option("--out", g_out, "Output directory")->required();

    // train
    std::string t_model = "vae-bptf", t_out;
    CommonTrainArgs t_args;
    CLI::App* train = app.add_subcommand("train", "Fit a model and write a checkpoint");
    train->add_option("--model", t_model, "vae-bptf or gibbs-bptf (default vae-bptf)");
    train->add_option("--config", t_args.config_path, "Flat key=value config file");
    train->add_option("--data", t_args.data_path, "Training tensor path")->required();
    train->add_option("--out", t_out, "Output directory")->required();
    CLI::Option* t_seed = train->add_option("--seed", t_args.seed, "Override the config seed");
    CLI::Option* t_thr = train->add_option("--threads", t_args.threads, "Worker thread count")
                             ->envname("BPTF_THREADS");
    train->add_flag("--no-reweight", t_args.no_reweight, "Force observation weights to 1");
    train->add_option("--k", t_args.k_override, "Override the config factor count");
    train->add_option("--iters", t_args.iters_override, "Override the config max iterations");

    // evaluate
    std::string e_ck, e_test, e_grid, e_data, e_model = "vae-bptf";
    bool e_round = false;
    std::size_t e_cv = 0, e_threads = 0;
    std::uint64_t e_seed = 1;
    CLI::App* eval = app.add_subcommand("evaluate", "Metrics from a checkpoint, or CV grid search");
    eval->add_option("--checkpoint", e_ck, "Checkpoint path");
    eval->add_option("--test", e_test, "Held-out tensor path");
    eval->add_flag("--round", e_round, "Round predictions to integers before MAE");
    eval->add_option("--cv", e_cv, "Run k-fold cross-validation with this fold count");
    eval->add_option("--grid", e_grid, "Grid file (values may hold ;-separated alternatives)");
    eval->add_option("--data", e_data, "Training tensor for cross-validation");
    eval->add_option("--model", e_model, "Model fitted during cross-validation");
    eval->add_option("--seed", e_seed, "Cross-validation master seed (default 1)");
    CLI::Option* e_thr = eval->add_option("--threads", e_threads, "Worker thread count")
                             ->envname("BPTF_THREADS");

    // neighbors
    std::string n_ck, n_inc;
    std::size_t n_mode = 0, n_entity = 0, n_k = 10;
    bool n_all = false;
    double n_min_df = 0.001;
    CLI::App* nb = app.add_subcommand("neighbors", "Nearest entities and coherence scores");
    nb->add_option("--checkpoint", n_ck, "Checkpoint path")->required();
    nb->add_option("--mode", n_mode, "Tensor mode to probe (default 0)");
    CLI::Option* n_ent = nb->add_option("--entity", n_entity, "Probe entity index");
    nb->add_flag("--all", n_all, "Score every entity (requires --incidence)");
    nb->add_option("--k", n_k, "Neighborhood size including the probe (default 10)");
    nb->add_option("--incidence", n_inc, "Document-entity incidence file for NPMI");
    nb->add_option("--min-df", n_min_df, "Document-frequency floor (default 0.001)");

    // ablate
    std::string a_test, a_out;
    CommonTrainArgs a_args;
    CLI::App* ab = app.add_subcommand("ablate", "Paired fit with and without reweighting");
    ab->add_option("--config", a_args.config_path, "Flat key=value config file");
    ab->add_option("--data", a_args.data_path, "Training tensor path")->required();
    ab->add_option("--test", a_test, "Held-out tensor path")->required();
    ab->add_option("--out", a_out, "Optional directory for the two ELBO traces");
    CLI::Option* a_seed = ab->add_option("--seed", a_args.seed, "Override the config seed");
    CLI::Option* a_thr = ab->add_option("--threads", a_args.threads, "Worker thread count")
                             ->envname("BPTF_THREADS");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_generate(g_modes, g_k, g_alpha, g_beta, g_seed, g_out);
        if (train->parsed()) {
            t_args.seed_set = t_seed->count() > 0;
            t_args.threads_set = t_thr->count() > 0;
            return cmd_train(t_model, t_args, t_out);
        }
        if (eval->parsed()) {
            if (e_cv > 0) {
                if (e_grid.empty()) throw usage_error("--cv requires --grid");
                if (e_data.empty()) throw usage_error("--cv requires --data");
                return cmd_evaluate_cv(e_data, e_grid, e_cv, e_model, e_seed, e_thr->count() > 0,
                                       e_threads);
            }
            if (e_ck.empty()) throw usage_error("--checkpoint is required without --cv");
            if (e_test.empty()) throw usage_error("--test is required without --cv");
            return cmd_evaluate_checkpoint(e_ck, e_test, e_round);
        }
        if (nb->parsed())
            return cmd_neighbors(n_ck, n_mode, n_ent->count() > 0, n_entity, n_all, n_k, n_inc,
                                 n_min_df);
        if (ab->parsed()) {
            a_args.seed_set = a_seed->count() > 0;
            a_args.threads_set = a_thr->count() > 0;
            return cmd_ablate(a_args, a_test, a_out);
        }
        return 2; // unreachable: a subcommand is required
    } catch (const usage_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const bptf::numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const bptf::parse_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal failure: " << e.what() << "\n";
        return 4;
    }
}

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "config_file.hpp"
#include "defs.hpp"
#include "encoder.hpp"
#include "inference.hpp"
#include "math.hpp"
#include "model_config.hpp"
#include "tensor.hpp"

namespace bptf {

namespace details {

/** Hexadecimal float formatting: round-trips every finite double exactly. */
inline std::string fmt_hex(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

} // namespace details

/**
 * Everything needed to resume or evaluate a fitted model: the resolved
 * configuration, the final factor state, the prediction-time mean factors,
 * and (for the encoder-based model) the full network bank.
 */
struct Checkpoint {
    std::string model = "vae-bptf"; // vae-bptf | gibbs-bptf
    ModelConfig cfg;
    std::int64_t ybar = 1;
    std::vector<std::size_t> mode_sizes;
    FactorState state;
    std::vector<Matrix> mean_factors;
    EncoderBank bank; // empty (size 0) for the Gibbs baseline
};

namespace details {

inline void write_matrix(std::ostream& out, const std::string& tag, std::size_t id,
                         const Matrix& m) {
    out << tag << "\t" << id << "\t" << m.rows() << "\t" << m.cols() << "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "\t" : "") << fmt_hex(m(r, c));
        out << "\n";
    }
}

inline void write_vector(std::ostream& out, const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? "\t" : "") << fmt_hex(v(i));
    out << "\n";
}

inline void write_config(std::ostream& out, const ModelConfig& c) {
    auto kv = [&out](const char* k, const std::string& v) {
        out << "config\t" << k << "\t" << v << "\n";
    };
    kv("k", std::to_string(c.k));
    std::string widths;
    for (std::size_t i = 0; i < c.layer_widths.size(); ++i)
        widths += (i ? "," : "") + std::to_string(c.layer_widths[i]);
    kv("layers", c.layer_widths.empty() ? "none" : widths);
    kv("hidden_activation", to_string(c.hidden_activation));
    kv("output_activation", to_string(c.output_activation));
    kv("theta", fmt_hex(c.theta));
    kv("eta", fmt_hex(c.eta));
    kv("reweight", c.reweight ? "true" : "false");
    kv("prior_shape", fmt_hex(c.prior_shape));
    kv("prior_rate", fmt_hex(c.prior_rate));
    kv("sigma_sq", fmt_hex(c.sigma_sq));
    kv("adam_lr", fmt_hex(c.adam_lr));
    kv("adam_beta1", fmt_hex(c.adam_beta1));
    kv("adam_beta2", fmt_hex(c.adam_beta2));
    kv("adam_eps", fmt_hex(c.adam_eps));
    kv("max_iters", std::to_string(c.max_iters));
    kv("conv_window", std::to_string(c.conv_window));
    kv("conv_tol", fmt_hex(c.conv_tol));
    kv("seed", std::to_string(c.seed));
    kv("mean_sweeps", std::to_string(c.mean_sweeps));
    kv("gibbs_burn_in", std::to_string(c.gibbs_burn_in));
    kv("threads", std::to_string(c.threads));
}

} // namespace details

inline void save_checkpoint(std::ostream& out, const Checkpoint& ck) {
    out << "bptf-checkpoint\t1\n";
    out << "model\t" << ck.model << "\n";
    details::write_config(out, ck.cfg);
    out << "ybar\t" << ck.ybar << "\n";
    out << "modes";
    for (std::size_t n : ck.mode_sizes) out << "\t" << n;
    out << "\n";
    for (std::size_t m = 0; m < ck.state.n_modes(); ++m) {
        details::write_matrix(out, "factors", m, ck.state.factors[m]);
        details::write_matrix(out, "post_shape", m, ck.state.post_shape[m]);
        details::write_matrix(out, "post_rate", m, ck.state.post_rate[m]);
    }
    for (std::size_t m = 0; m < ck.mean_factors.size(); ++m)
        details::write_matrix(out, "mean_factors", m, ck.mean_factors[m]);

    out << "bank\t" << ck.bank.size() << "\t" << ck.bank.n_modes() << "\t" << ck.bank.k() << "\n";
    for (std::size_t i = 0; i < ck.bank.size(); ++i) {
        const EncoderNet& net = ck.bank.net_at(i);
        out << "net\t" << i << "\t" << net.layers.size() << "\t"
            << to_string(net.hidden_activation) << "\t" << to_string(net.output_activation)
            << "\n";
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            const EncoderLayer& layer = net.layers[l];
            out << "layer\t" << l << "\t" << layer.W.rows() << "\t" << layer.W.cols() << "\n";
            for (Eigen::Index r = 0; r < layer.W.rows(); ++r) {
                for (Eigen::Index c = 0; c < layer.W.cols(); ++c)
                    out << (c ? "\t" : "") << details::fmt_hex(layer.W(r, c));
                out << "\n";
            }
            details::write_vector(out, layer.b);
        }
        out << "outw\t" << net.out_w.size() << "\n";
        details::write_vector(out, net.out_w);
        out << "outb\t" << details::fmt_hex(net.out_b) << "\n";
    }
    out << "end\n";
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw parse_error("cannot open '" + path + "' for writing");
    save_checkpoint(out, ck);
    if (!out) throw parse_error("failed writing '" + path + "'");
}

namespace details {

class LineReader {
  public:
    LineReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

    bool next(std::string& line) {
        if (!std::getline(in_, line)) return false;
        ++lineno_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    }

    std::string require(const std::string& what) {
        std::string line;
        if (!next(line)) fail("unexpected end of file, expected " + what);
        return line;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw parse_error(name_ + ": line " + std::to_string(lineno_) + ": " + what);
    }

    std::vector<std::string> cells(const std::string& line) const {
        std::vector<std::string> out;
        std::size_t start = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', start);
            out.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        return out;
    }

    double num(const std::string& s) {
        double v = 0.0;
        if (!parse_double(s, v)) fail("bad number '" + s + "'");
        return v;
    }

    std::size_t idx(const std::string& s) {
        std::size_t v = 0;
        if (!parse_size(s, v)) fail("bad integer '" + s + "'");
        return v;
    }

    Matrix matrix(const std::string& tag, std::size_t id) {
        const std::vector<std::string> head = cells(require(tag + " header"));
        if (head.size() != 4 || head[0] != tag || head[1] != std::to_string(id))
            fail("expected '" + tag + "' section " + std::to_string(id));
        Matrix m(static_cast<Eigen::Index>(idx(head[2])), static_cast<Eigen::Index>(idx(head[3])));
        read_rows(m);
        return m;
    }

    void read_rows(Matrix& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const std::vector<std::string> row = cells(require("matrix row"));
            if (row.size() != static_cast<std::size_t>(m.cols()))
                fail("expected " + std::to_string(m.cols()) + " values, got " +
                     std::to_string(row.size()));
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                m(r, c) = num(row[static_cast<std::size_t>(c)]);
        }
    }

    Vector vector_line(std::size_t n) {
        const std::vector<std::string> row = cells(require("vector line"));
        if (row.size() != n)
            fail("expected " + std::to_string(n) + " values, got " + std::to_string(row.size()));
        Vector v(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = num(row[i]);
        return v;
    }

  private:
    std::istream& in_;
    std::string name_;
    std::size_t lineno_ = 0;
};

} // namespace details

inline Checkpoint load_checkpoint(std::istream& in, const std::string& name = "<stream>") {
    details::LineReader r(in, name);
    Checkpoint ck;

    std::vector<std::string> c = r.cells(r.require("checkpoint header"));
    if (c.size() != 2 || c[0] != "bptf-checkpoint") r.fail("missing 'bptf-checkpoint' header");
    if (c[1] != "1") r.fail("unsupported checkpoint version '" + c[1] + "'");

    c = r.cells(r.require("model line"));
    if (c.size() != 2 || c[0] != "model") r.fail("expected 'model' line");
    if (c[1] != "vae-bptf" && c[1] != "gibbs-bptf") r.fail("unknown model '" + c[1] + "'");
    ck.model = c[1];

    std::string line = r.require("config");
    while (true) {
        c = r.cells(line);
        if (c[0] != "config") break;
        if (c.size() != 3) r.fail("malformed config line");
        try {
            if (!apply_config_value(ck.cfg, c[1], c[2])) r.fail("unknown config key '" + c[1] + "'");
        } catch (const std::invalid_argument& e) {
            r.fail(e.what());
        }
        line = r.require("config or ybar");
    }

    c = r.cells(line);
    if (c.size() != 2 || c[0] != "ybar") r.fail("expected 'ybar' line");
    {
        std::int64_t y = 0;
        if (!details::parse_count(c[1], y)) r.fail("bad ybar '" + c[1] + "'");
        ck.ybar = y;
    }

    c = r.cells(r.require("modes line"));
    if (c.size() < 2 || c[0] != "modes") r.fail("expected 'modes' line");
    for (std::size_t i = 1; i < c.size(); ++i) ck.mode_sizes.push_back(r.idx(c[i]));
    const std::size_t m_all = ck.mode_sizes.size();

    for (std::size_t m = 0; m < m_all; ++m) {
        ck.state.factors.push_back(r.matrix("factors", m));
        ck.state.post_shape.push_back(r.matrix("post_shape", m));
        ck.state.post_rate.push_back(r.matrix("post_rate", m));
    }
    for (std::size_t m = 0; m < m_all; ++m)
        ck.mean_factors.push_back(r.matrix("mean_factors", m));

    c = r.cells(r.require("bank line"));
    if (c.size() != 4 || c[0] != "bank") r.fail("expected 'bank' line");
    const std::size_t n_nets = r.idx(c[1]);
    const std::size_t bank_modes = r.idx(c[2]);
    const std::size_t bank_k = r.idx(c[3]);
    if (n_nets > 0) {
        if (n_nets != bank_modes * bank_k * 2) r.fail("bank size inconsistent with modes and k");
        ck.bank = EncoderBank(bank_modes, bank_k);
        for (std::size_t i = 0; i < n_nets; ++i) {
            c = r.cells(r.require("net header"));
            if (c.size() != 5 || c[0] != "net" || c[1] != std::to_string(i))
                r.fail("expected net " + std::to_string(i));
            EncoderNet& net = ck.bank.net_at(i);
            const std::size_t n_layers = r.idx(c[2]);
            net.hidden_activation = activation_from_string(c[3]);
            net.output_activation = activation_from_string(c[4]);
            net.layers.resize(n_layers);
            for (std::size_t l = 0; l < n_layers; ++l) {
                c = r.cells(r.require("layer header"));
                if (c.size() != 4 || c[0] != "layer" || c[1] != std::to_string(l))
                    r.fail("expected layer " + std::to_string(l));
                net.layers[l].W = Matrix(static_cast<Eigen::Index>(r.idx(c[2])),
                                         static_cast<Eigen::Index>(r.idx(c[3])));
                r.read_rows(net.layers[l].W);
                net.layers[l].b = r.vector_line(static_cast<std::size_t>(net.layers[l].W.cols()));
            }
            c = r.cells(r.require("outw header"));
            if (c.size() != 2 || c[0] != "outw") r.fail("expected 'outw' line");
            net.out_w = r.vector_line(r.idx(c[1]));
            c = r.cells(r.require("outb line"));
            if (c.size() != 2 || c[0] != "outb") r.fail("expected 'outb' line");
            net.out_b = r.num(c[1]);
        }
    }

    c = r.cells(r.require("end line"));
    if (c.size() != 1 || c[0] != "end") r.fail("expected 'end'");

    for (std::size_t m = 0; m < m_all; ++m) {
        if (static_cast<std::size_t>(ck.state.factors[m].rows()) != ck.mode_sizes[m])
            r.fail("factor rows inconsistent with mode sizes");
    }
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open '" + path + "'");
    return load_checkpoint(in, path);
}

/** Line-oriented trace: header then one `iter<TAB>value` row per iteration. */
inline void save_trace(std::ostream& out, const std::vector<double>& trace) {
    out << "iter\telbo\n";
    char buf[48];
    for (std::size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", trace[i]);
        out << (i + 1) << "\t" << buf << "\n";
    }
}

inline void save_trace(const std::string& path, const std::vector<double>& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw parse_error("cannot open '" + path + "' for writing");
    save_trace(out, trace);
    if (!out) throw parse_error("failed writing '" + path + "'");
}

} // namespace bptf

#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "defs.hpp"
#include "model_config.hpp"
#include "tensor.hpp"

namespace bptf {

namespace details {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

inline double strict_double(const std::string& s, const std::string& key) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
        throw std::invalid_argument("bad value '" + s + "' for key '" + key + "'");
    return v;
}

inline std::size_t strict_size(const std::string& s, const std::string& key) {
    std::size_t v = 0;
    if (!parse_size(s, v))
        throw std::invalid_argument("bad value '" + s + "' for key '" + key + "'");
    return v;
}

inline bool strict_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("bad value '" + s + "' for key '" + key + "'");
}

} // namespace details

/**
 * Apply one key=value pair to a ModelConfig. Returns false for an unknown
 * key; throws invalid_argument for a malformed value. `layers` takes a
 * comma-separated width list or `none` for no hidden layers.
 */
inline bool apply_config_value(ModelConfig& c, const std::string& key, const std::string& value) {
    using details::strict_bool;
    using details::strict_double;
    using details::strict_size;
    if (key == "k") {
        c.k = strict_size(value, key);
    } else if (key == "layers") {
        c.layer_widths.clear();
        if (value != "none") {
            std::size_t start = 0;
            for (;;) {
                const std::size_t comma = value.find(',', start);
                c.layer_widths.push_back(strict_size(
                    value.substr(start, comma == std::string::npos ? comma : comma - start), key));
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
        }
    } else if (key == "hidden_activation") {
        c.hidden_activation = activation_from_string(value);
    } else if (key == "output_activation") {
        c.output_activation = activation_from_string(value);
    } else if (key == "theta") {
        c.theta = strict_double(value, key);
    } else if (key == "eta") {
        c.eta = strict_double(value, key);
    } else if (key == "reweight") {
        c.reweight = strict_bool(value, key);
    } else if (key == "prior_shape") {
        c.prior_shape = strict_double(value, key);
    } else if (key == "prior_rate") {
        c.prior_rate = strict_double(value, key);
    } else if (key == "sigma_sq") {
        c.sigma_sq = strict_double(value, key);
    } else if (key == "adam_lr") {
        c.adam_lr = strict_double(value, key);
    } else if (key == "adam_beta1") {
        c.adam_beta1 = strict_double(value, key);
    } else if (key == "adam_beta2") {
        c.adam_beta2 = strict_double(value, key);
    } else if (key == "adam_eps") {
        c.adam_eps = strict_double(value, key);
    } else if (key == "max_iters") {
        c.max_iters = strict_size(value, key);
    } else if (key == "conv_window") {
        c.conv_window = strict_size(value, key);
    } else if (key == "conv_tol") {
        c.conv_tol = strict_double(value, key);
    } else if (key == "seed") {
        c.seed = strict_size(value, key);
    } else if (key == "mean_sweeps") {
        c.mean_sweeps = strict_size(value, key);
    } else if (key == "gibbs_burn_in") {
        c.gibbs_burn_in = strict_size(value, key);
    } else if (key == "threads") {
        c.threads = strict_size(value, key);
    } else {
        return false;
    }
    return true;
}

struct ConfigEntry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

/**
 * Flat key=value file: one pair per line, `#` starts a comment line, blank
 * lines ignored. Duplicate keys are rejected so experiment manifests stay
 * unambiguous.
 */
inline std::vector<ConfigEntry> parse_kv_file(std::istream& in,
                                              const std::string& name = "<stream>") {
    auto fail = [&name](std::size_t lineno, const std::string& what) {
        throw parse_error(name + ": line " + std::to_string(lineno) + ": " + what);
    };
    std::vector<ConfigEntry> entries;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = details::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) fail(lineno, "expected key=value, got '" + t + "'");
        ConfigEntry e{details::trim(t.substr(0, eq)), details::trim(t.substr(eq + 1)), lineno};
        if (e.key.empty()) fail(lineno, "empty key");
        if (e.value.empty()) fail(lineno, "empty value for key '" + e.key + "'");
        if (!seen.insert(e.key).second) fail(lineno, "duplicate key '" + e.key + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

/** Parse a config file into `base`, rejecting unknown keys. */
inline ModelConfig config_from_entries(const std::vector<ConfigEntry>& entries,
                                       const std::string& name = "<stream>",
                                       ModelConfig base = ModelConfig{}) {
    for (const ConfigEntry& e : entries) {
        try {
            if (!apply_config_value(base, e.key, e.value))
                throw std::invalid_argument("unknown key '" + e.key + "'");
        } catch (const std::invalid_argument& err) {
            throw parse_error(name + ": line " + std::to_string(e.line) + ": " + err.what());
        }
    }
    return base;
}

inline ModelConfig load_config(const std::string& path, ModelConfig base = ModelConfig{}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open '" + path + "'");
    return config_from_entries(parse_kv_file(in, path), path, std::move(base));
}

struct GridCell {
    ModelConfig cfg;
    std::vector<std::pair<std::string, std::string>> assignment; // varied keys only
};

/**
 * Grid expansion: the same key=value format, but a value may hold several
 * alternatives separated by `;` (`,` stays reserved for width lists inside
 * one alternative). Cells enumerate the Cartesian product in file key
 * order, last key varying fastest.
 */
inline std::vector<GridCell> expand_grid(const std::vector<ConfigEntry>& entries,
                                         const std::string& name = "<stream>",
                                         const ModelConfig& base = ModelConfig{}) {
    if (entries.empty()) throw parse_error(name + ": empty grid");
    std::vector<std::pair<ConfigEntry, std::vector<std::string>>> axes;
    for (const ConfigEntry& e : entries) {
        std::vector<std::string> alts;
        std::size_t start = 0;
        for (;;) {
            const std::size_t semi = e.value.find(';', start);
            const std::string alt = details::trim(
                e.value.substr(start, semi == std::string::npos ? semi : semi - start));
            if (alt.empty())
                throw parse_error(name + ": line " + std::to_string(e.line) +
                                  ": empty alternative for key '" + e.key + "'");
            alts.push_back(alt);
            if (semi == std::string::npos) break;
            start = semi + 1;
        }
        axes.emplace_back(e, std::move(alts));
    }

    std::vector<GridCell> cells;
    std::vector<std::size_t> pick(axes.size(), 0);
    for (;;) {
        GridCell cell;
        cell.cfg = base;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            const ConfigEntry& e = axes[a].first;
            const std::string& value = axes[a].second[pick[a]];
            try {
                if (!apply_config_value(cell.cfg, e.key, value))
                    throw std::invalid_argument("unknown key '" + e.key + "'");
            } catch (const std::invalid_argument& err) {
                throw parse_error(name + ": line " + std::to_string(e.line) + ": " + err.what());
            }
            if (axes[a].second.size() > 1) cell.assignment.emplace_back(e.key, value);
        }
        cells.push_back(std::move(cell));

        std::size_t a = axes.size();
        while (a-- > 0) {
            if (++pick[a] < axes[a].second.size()) break;
            pick[a] = 0;
            if (a == 0) return cells;
        }
    }
}

inline std::vector<GridCell> load_grid(const std::string& path,
                                       const ModelConfig& base = ModelConfig{}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open '" + path + "'");
    return expand_grid(parse_kv_file(in, path), path, base);
}

} // namespace bptf

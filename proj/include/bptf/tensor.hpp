#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "defs.hpp"
#include "rng.hpp"

namespace bptf {

/**
 * Sparse N-way count tensor in coordinate form. Entries are (index tuple,
 * count) pairs with 0-based indices; counts are >= 1 (zeros are implicit and
 * never stored) and index tuples are unique. Immutable after construction,
 * so concurrent reads are safe.
 *
 * Storage is flat: coordinates live in one vector of size
 * n_entries * n_modes, addressed as index(position, mode).
 */
class SparseCountTensor {
  public:
    SparseCountTensor(std::vector<std::size_t> mode_sizes, std::vector<std::size_t> coords,
                      std::vector<std::int64_t> counts)
        : mode_sizes_(std::move(mode_sizes)), coords_(std::move(coords)),
          counts_(std::move(counts)) {
        validate();
    }

    explicit SparseCountTensor(std::vector<std::size_t> mode_sizes)
        : mode_sizes_(std::move(mode_sizes)) {
        validate();
    }

    std::size_t n_modes() const { return mode_sizes_.size(); }
    std::size_t n_entries() const { return counts_.size(); }
    std::size_t mode_size(std::size_t m) const { return mode_sizes_[m]; }
    const std::vector<std::size_t>& mode_sizes() const { return mode_sizes_; }

    /** Index of entry `p` along mode `m`. */
    std::size_t index(std::size_t p, std::size_t m) const {
        return coords_[p * n_modes() + m];
    }
    std::int64_t count(std::size_t p) const { return counts_[p]; }

    const std::vector<std::size_t>& coords() const { return coords_; }
    const std::vector<std::int64_t>& counts() const { return counts_; }

  private:
    void validate() const {
        if (mode_sizes_.empty()) throw std::invalid_argument("tensor needs at least one mode");
        for (std::size_t n : mode_sizes_)
            if (n == 0) throw std::invalid_argument("mode sizes must be positive");
        const std::size_t m = n_modes();
        if (coords_.size() != counts_.size() * m)
            throw std::invalid_argument("coordinate/count length mismatch");
        for (std::size_t p = 0; p < counts_.size(); ++p) {
            if (counts_[p] < 1) throw std::invalid_argument("counts must be >= 1");
            for (std::size_t d = 0; d < m; ++d)
                if (coords_[p * m + d] >= mode_sizes_[d])
                    throw std::invalid_argument("index out of range");
        }
        check_duplicates();
    }

    void check_duplicates() const {
        const std::size_t m = n_modes();
        std::unordered_set<std::uint64_t> seen;
        seen.reserve(counts_.size() * 2);
        std::vector<std::size_t> dup_check; // fall back to exact check on hash collision
        for (std::size_t p = 0; p < counts_.size(); ++p) {
            std::uint64_t h = 0xcbf29ce484222325ULL;
            for (std::size_t d = 0; d < m; ++d) {
                h ^= coords_[p * m + d] + 0x9e3779b97f4a7c15ULL;
                h *= 0x100000001b3ULL;
            }
            if (!seen.insert(h).second) dup_check.push_back(p);
        }
        if (dup_check.empty()) return;
        std::map<std::vector<std::size_t>, std::size_t> exact;
        for (std::size_t p = 0; p < counts_.size(); ++p) {
            std::vector<std::size_t> key(coords_.begin() + static_cast<std::ptrdiff_t>(p * m),
                                         coords_.begin() + static_cast<std::ptrdiff_t>((p + 1) * m));
            if (!exact.emplace(std::move(key), p).second)
                throw std::invalid_argument("duplicate coordinate tuple");
        }
    }

    std::vector<std::size_t> mode_sizes_;
    std::vector<std::size_t> coords_;
    std::vector<std::int64_t> counts_;
};

/**
 * Per-mode inverted index: for each mode m and entity s, the (sorted) list
 * of entry positions whose m-th index equals s. The lists of one mode
 * partition the entry positions.
 */
class ModeIndex {
  public:
    explicit ModeIndex(const SparseCountTensor& t) {
        lists_.resize(t.n_modes());
        for (std::size_t m = 0; m < t.n_modes(); ++m)
            lists_[m].resize(t.mode_size(m));
        for (std::size_t p = 0; p < t.n_entries(); ++p)
            for (std::size_t m = 0; m < t.n_modes(); ++m)
                lists_[m][t.index(p, m)].push_back(p);
    }

    const std::vector<std::size_t>& positions(std::size_t mode, std::size_t entity) const {
        return lists_[mode][entity];
    }

  private:
    std::vector<std::vector<std::vector<std::size_t>>> lists_;
};

inline ModeIndex build_mode_index(const SparseCountTensor& t) { return ModeIndex(t); }

namespace details {

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline bool parse_size(const std::string& s, std::size_t& out) {
    if (s.empty()) return false;
    std::size_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return false;
        v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    out = v;
    return true;
}

inline bool parse_count(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (errno != 0 || end == s.c_str() || *end != '\0') return false;
    out = v;
    return true;
}

} // namespace details

/**
 * Parse a tensor from the text format:
 *
 *   #modes: n1 n2 ... nM
 *   i1<TAB>i2<TAB>...<TAB>iM<TAB>count
 *
 * Indices are 0-based. Lines beginning with '#' after the header are
 * comments; blank lines are skipped. Duplicate coordinates, out-of-range
 * indices and non-positive counts are rejected with the line number.
 */
inline SparseCountTensor load_tensor(std::istream& in, const std::string& name = "<stream>") {
    auto fail = [&](std::size_t line, const std::string& what) {
        throw parse_error(name + ": line " + std::to_string(line) + ": " + what);
    };
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) fail(1, "missing '#modes:' header");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string prefix = "#modes:";
    if (line.compare(0, prefix.size(), prefix) != 0) fail(lineno, "missing '#modes:' header");
    std::vector<std::size_t> mode_sizes;
    for (const std::string& tok : details::split_ws(line.substr(prefix.size()))) {
        std::size_t n = 0;
        if (!details::parse_size(tok, n) || n == 0)
            fail(lineno, "bad mode size '" + tok + "'");
        mode_sizes.push_back(n);
    }
    if (mode_sizes.empty()) fail(lineno, "header declares no modes");
    const std::size_t m = mode_sizes.size();

    std::vector<std::size_t> coords;
    std::vector<std::int64_t> counts;
    std::map<std::vector<std::size_t>, std::size_t> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', start);
            cells.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (cells.size() != m + 1)
            fail(lineno, "expected " + std::to_string(m + 1) + " tab-separated fields, got " +
                             std::to_string(cells.size()));
        std::vector<std::size_t> idx(m);
        for (std::size_t d = 0; d < m; ++d) {
            if (!details::parse_size(cells[d], idx[d]))
                fail(lineno, "bad index '" + cells[d] + "'");
            if (idx[d] >= mode_sizes[d])
                fail(lineno, "index " + cells[d] + " out of range for mode " + std::to_string(d));
        }
        std::int64_t y = 0;
        if (!details::parse_count(cells[m], y)) fail(lineno, "bad count '" + cells[m] + "'");
        if (y < 1) fail(lineno, "non-positive count " + std::to_string(y));
        if (!seen.emplace(idx, lineno).second) fail(lineno, "duplicate coordinate tuple");
        coords.insert(coords.end(), idx.begin(), idx.end());
        counts.push_back(y);
    }
    return SparseCountTensor(std::move(mode_sizes), std::move(coords), std::move(counts));
}

inline SparseCountTensor load_tensor(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error(path + ": cannot open file");
    return load_tensor(in, path);
}

inline void save_tensor(std::ostream& out, const SparseCountTensor& t) {
    out << "#modes:";
    for (std::size_t n : t.mode_sizes()) out << ' ' << n;
    out << '\n';
    for (std::size_t p = 0; p < t.n_entries(); ++p) {
        for (std::size_t m = 0; m < t.n_modes(); ++m) out << t.index(p, m) << '\t';
        out << t.count(p) << '\n';
    }
}

inline void save_tensor(const std::string& path, const SparseCountTensor& t) {
    std::ofstream out(path, std::ios::binary); // LF line endings on every platform
    if (!out) throw parse_error(path + ": cannot open file for writing");
    save_tensor(out, t);
}

struct DataSplit {
    SparseCountTensor train;
    SparseCountTensor test;
    std::uint64_t seed;
};

namespace details {

inline SparseCountTensor take_positions(const SparseCountTensor& t,
                                        const std::vector<std::size_t>& positions) {
    const std::size_t m = t.n_modes();
    std::vector<std::size_t> coords;
    coords.reserve(positions.size() * m);
    std::vector<std::int64_t> counts;
    counts.reserve(positions.size());
    for (std::size_t p : positions) {
        for (std::size_t d = 0; d < m; ++d) coords.push_back(t.index(p, d));
        counts.push_back(t.count(p));
    }
    return SparseCountTensor(t.mode_sizes(), std::move(coords), std::move(counts));
}

inline std::vector<std::size_t> shuffled_positions(std::size_t n, RngStream& rng) {
    std::vector<std::size_t> pos(n);
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i)
        std::swap(pos[i - 1], pos[rng.below(i)]);
    return pos;
}

} // namespace details

/**
 * Uniformly random disjoint split of the observed entries; entry-level, so
 * entities may end up absent from the training side (cold entities).
 * Deterministic for a fixed seed.
 */
inline DataSplit train_test_split(const SparseCountTensor& t, double test_fraction,
                                  std::uint64_t seed) {
    if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
        throw std::invalid_argument("test_fraction must lie in (0,1)");
    if (t.n_entries() < 2) throw std::invalid_argument("need >= 2 entries to split");
    RngStream rng(derive_seed(seed, "split"));
    std::vector<std::size_t> pos = details::shuffled_positions(t.n_entries(), rng);
    std::size_t n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(t.n_entries())));
    n_test = std::min(std::max<std::size_t>(n_test, 1), t.n_entries() - 1);
    std::vector<std::size_t> test_pos(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train_pos(pos.begin() + static_cast<std::ptrdiff_t>(n_test), pos.end());
    std::sort(test_pos.begin(), test_pos.end());
    std::sort(train_pos.begin(), train_pos.end());
    return DataSplit{details::take_positions(t, train_pos), details::take_positions(t, test_pos),
                     seed};
}

/** Keep round(fraction * n_entries) uniformly chosen entries; sizes unchanged. */
inline SparseCountTensor subsample(const SparseCountTensor& t, double fraction,
                                   std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("fraction must lie in (0,1]");
    if (fraction == 1.0) return t;
    RngStream rng(derive_seed(seed, "subsample"));
    std::vector<std::size_t> pos = details::shuffled_positions(t.n_entries(), rng);
    const std::size_t keep = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(t.n_entries())));
    pos.resize(std::min(keep, t.n_entries()));
    std::sort(pos.begin(), pos.end());
    return details::take_positions(t, pos);
}

/**
 * Most frequent count value among stored entries; ties broken by the
 * smallest value. This is the reweighting center computed on the training
 * split only.
 */
inline std::int64_t most_frequent_value(const SparseCountTensor& t) {
    if (t.n_entries() == 0) throw std::invalid_argument("most_frequent_value: empty tensor");
    std::map<std::int64_t, std::size_t> freq;
    for (std::size_t p = 0; p < t.n_entries(); ++p) ++freq[t.count(p)];
    std::int64_t best = 0;
    std::size_t best_n = 0;
    for (const auto& [value, n] : freq) {
        if (n > best_n) { // strict: map iteration is ascending, so ties keep the smallest
            best = value;
            best_n = n;
        }
    }
    return best;
}

} // namespace bptf

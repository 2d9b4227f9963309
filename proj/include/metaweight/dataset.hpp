#pragma once

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "metaweight/errors.hpp"
#include "metaweight/matrix.hpp"

namespace metaweight {

/// Classification dataset that keeps both the observed (possibly corrupted)
/// labels and the hidden clean ones, so weight-separation analysis can tell
/// clean and noisy samples apart.
struct LabeledDataset {
    Matrix features;                  // N x d
    std::vector<int> observed_labels; // length N
    std::vector<int> clean_labels;    // length N
    std::vector<bool> corrupted;      // observed != clean
    int num_classes = 0;

    std::size_t size() const { return observed_labels.size(); }
    std::size_t dim() const { return features.cols(); }

    std::span<const double> x(std::size_t i) const { return features.row(i); }

    void check_invariants() const {
        if (features.rows() != observed_labels.size() ||
            observed_labels.size() != clean_labels.size() ||
            clean_labels.size() != corrupted.size())
            throw DataError("LabeledDataset: field lengths disagree");
        for (std::size_t i = 0; i < size(); ++i) {
            if (observed_labels[i] < 0 || observed_labels[i] >= num_classes ||
                clean_labels[i] < 0 || clean_labels[i] >= num_classes)
                throw DataError("LabeledDataset: label out of range at row " +
                                std::to_string(i));
            if (corrupted[i] != (observed_labels[i] != clean_labels[i]))
                throw DataError("LabeledDataset: corrupted flag inconsistent at row " +
                                std::to_string(i));
        }
    }

    LabeledDataset subset(const std::vector<std::size_t>& indices) const {
        LabeledDataset out;
        out.num_classes = num_classes;
        out.features = Matrix(indices.size(), dim());
        out.observed_labels.reserve(indices.size());
        out.clean_labels.reserve(indices.size());
        out.corrupted.reserve(indices.size());
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const std::size_t i = indices[r];
            for (std::size_t c = 0; c < dim(); ++c) out.features(r, c) = features(i, c);
            out.observed_labels.push_back(observed_labels[i]);
            out.clean_labels.push_back(clean_labels[i]);
            out.corrupted.push_back(corrupted[i]);
        }
        return out;
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (int y : observed_labels) counts[y]++;
        return counts;
    }

    double realized_noise_rate() const {
        if (size() == 0) return 0.0;
        std::size_t n = 0;
        for (bool c : corrupted) n += c ? 1 : 0;
        return static_cast<double>(n) / static_cast<double>(size());
    }
};

namespace detail {

inline std::string format_double_exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& field, std::size_t line_no,
                           const std::string& what) {
    double v = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw ParseError("line " + std::to_string(line_no) + ": non-numeric " + what +
                         " '" + field + "'");
    return v;
}

inline long parse_int(const std::string& field, std::size_t line_no,
                      const std::string& what) {
    long v = 0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw ParseError("line " + std::to_string(line_no) + ": non-integer " + what +
                         " '" + field + "'");
    return v;
}

inline std::vector<std::string> split_csv_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace detail

/// CSV schema: header `f0,...,f{d-1},label[,clean_label]`; decimal features,
/// integer labels. Writes both label columns so corruption survives a round trip.
inline void save_csv_dataset(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (std::size_t c = 0; c < ds.dim(); ++c) out << "f" << c << ",";
    out << "label,clean_label\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t c = 0; c < ds.dim(); ++c)
            out << detail::format_double_exact(ds.features(i, c)) << ",";
        out << ds.observed_labels[i] << "," << ds.clean_labels[i] << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

inline LabeledDataset load_csv_dataset(const std::string& path, bool has_clean_column) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);

    std::string header;
    if (!std::getline(in, header)) throw ParseError("line 1: missing header in " + path);
    const auto cols = detail::split_csv_line(header);
    std::size_t label_col = cols.size();
    std::size_t clean_col = cols.size();
    std::size_t feat_cols = 0;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] == "label") label_col = i;
        else if (cols[i] == "clean_label") clean_col = i;
        else if (cols[i].size() >= 2 && cols[i][0] == 'f') feat_cols++;
        else throw ParseError("line 1: unexpected column '" + cols[i] + "'");
    }
    if (label_col == cols.size()) throw ParseError("line 1: missing 'label' column");
    if (has_clean_column && clean_col == cols.size())
        throw ParseError("line 1: missing 'clean_label' column");
    const bool read_clean = clean_col != cols.size();

    std::vector<double> feats;
    std::vector<int> observed, clean;
    std::string line;
    std::size_t line_no = 1;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != cols.size())
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(cols.size()) + " fields, got " +
                             std::to_string(fields.size()));
        for (std::size_t c = 0; c < feat_cols; ++c)
            feats.push_back(detail::parse_double(fields[c], line_no, "feature"));
        observed.push_back(
            static_cast<int>(detail::parse_int(fields[label_col], line_no, "label")));
        clean.push_back(read_clean ? static_cast<int>(detail::parse_int(
                                         fields[clean_col], line_no, "clean_label"))
                                   : observed.back());
        ++rows;
    }

    LabeledDataset ds;
    ds.features = Matrix(rows, feat_cols, std::move(feats));
    ds.observed_labels = std::move(observed);
    ds.clean_labels = std::move(clean);
    ds.corrupted.resize(rows);
    int max_label = -1;
    for (std::size_t i = 0; i < rows; ++i) {
        ds.corrupted[i] = ds.observed_labels[i] != ds.clean_labels[i];
        max_label = std::max({max_label, ds.observed_labels[i], ds.clean_labels[i]});
        if (ds.observed_labels[i] < 0 || ds.clean_labels[i] < 0)
            throw ParseError("line " + std::to_string(i + 2) + ": negative label");
    }
    ds.num_classes = max_label + 1;
    return ds;
}

}  // namespace metaweight

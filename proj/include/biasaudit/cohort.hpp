#pragma once

// Domain types for embeddings and patient metadata, their file formats, and
// cohort-level summaries.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biasaudit/csv.hpp"
#include "biasaudit/error.hpp"

namespace biasaudit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// EmbeddingSet

/// n x d backbone features with one unique id per row. Immutable.
class EmbeddingSet {
public:
    EmbeddingSet() = default;

    EmbeddingSet(std::vector<std::string> ids, Matrix matrix)
        : ids_(std::move(ids)), matrix_(std::move(matrix)) {
        require(matrix_.rows() >= 1 && matrix_.cols() >= 1, "embedding set must have n >= 1 and d >= 1");
        require(static_cast<Eigen::Index>(ids_.size()) == matrix_.rows(), "embedding set has ", ids_.size(),
                " ids for ", matrix_.rows(), " rows");
        index_.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            require(!ids_[i].empty(), "row ", i, ": empty sample id");
            const auto [it, inserted] = index_.emplace(ids_[i], i);
            require(inserted, "row ", i, ": duplicate sample id '", ids_[i], "' (first seen at row ", it->second, ")");
            for (Eigen::Index j = 0; j < matrix_.cols(); ++j) {
                require(std::isfinite(matrix_(static_cast<Eigen::Index>(i), j)), "row ", i, ": non-finite value in column ",
                        j);
            }
        }
    }

    [[nodiscard]] std::size_t rows() const { return ids_.size(); }
    [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(matrix_.cols()); }
    [[nodiscard]] const std::vector<std::string>& ids() const { return ids_; }
    [[nodiscard]] const Matrix& matrix() const { return matrix_; }

    [[nodiscard]] std::optional<std::size_t> find(const std::string& id) const {
        const auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] EmbeddingSet subset(std::span<const std::size_t> rows) const {
        std::vector<std::string> ids;
        Matrix m(static_cast<Eigen::Index>(rows.size()), matrix_.cols());
        ids.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            ids.push_back(ids_.at(rows[i]));
            m.row(static_cast<Eigen::Index>(i)) = matrix_.row(static_cast<Eigen::Index>(rows[i]));
        }
        return {std::move(ids), std::move(m)};
    }

    /// Rows in the order of `ids`; every id must be present.
    [[nodiscard]] EmbeddingSet select(std::span<const std::string> ids) const {
        std::vector<std::size_t> rows;
        rows.reserve(ids.size());
        for (const auto& id : ids) {
            const auto r = find(id);
            require(r.has_value(), "sample id '", id, "' not present in embeddings");
            rows.push_back(*r);
        }
        return subset(rows);
    }

    friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
        return a.ids_ == b.ids_ && a.matrix_.rows() == b.matrix_.rows() && a.matrix_.cols() == b.matrix_.cols() &&
               a.matrix_ == b.matrix_;
    }

private:
    std::vector<std::string> ids_;
    Matrix matrix_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class EmbeddingFormat { Binary, Csv };

inline EmbeddingFormat parse_embedding_format(std::string_view s) {
    if (s == "binary" || s == "bin") return EmbeddingFormat::Binary;
    if (s == "csv") return EmbeddingFormat::Csv;
    fail("unknown embedding format '", s, "' (expected binary or csv)");
}

inline std::string default_ids_path(const std::string& path) { return path + ".ids"; }

namespace detail {

inline constexpr std::array<char, 4> kEmbeddingMagic{'E', 'M', 'B', '1'};

inline std::uint64_t read_le_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline void write_le_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline float read_le_f32(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
    return std::bit_cast<float>(bits);
}

inline void write_le_f32(std::string& out, float f) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline std::vector<std::string> read_id_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open id sidecar '", path, "'");
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ids.push_back(line);
    }
    while (!ids.empty() && ids.back().empty()) ids.pop_back();
    return ids;
}

inline EmbeddingSet load_embeddings_binary(const std::string& path, const std::string& ids_path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open '", path, "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    require(bytes.size() >= 20, "'", path, "': malformed header (", bytes.size(), " bytes, need 20)");
    require(std::memcmp(bytes.data(), kEmbeddingMagic.data(), 4) == 0, "'", path,
            "': malformed header (bad magic, expected EMB1)");
    const std::uint64_t n = read_le_u64(data + 4);
    const std::uint64_t d = read_le_u64(data + 12);
    require(n >= 1 && d >= 1, "'", path, "': malformed header (n=", n, ", d=", d, ")");
    const std::uint64_t payload = bytes.size() - 20;
    require(payload % 4 == 0, "'", path, "': payload is not a whole number of float32 values");
    const std::uint64_t values = payload / 4;
    if (values < n * d) {
        fail("'", path, "': payload truncated (declared n=", n, ", d=", d, "; found ", values / d, " complete rows)");
    }
    require(values == n * d, "'", path, "': dimension mismatch (declared n=", n, ", d=", d, " but payload holds ",
            values, " values)");

    auto ids = read_id_lines(ids_path);
    require(ids.size() == n, "'", ids_path, "': ", ids.size(), " ids for ", n, " rows");

    Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    const unsigned char* p = data + 20;
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::uint64_t j = 0; j < d; ++j, p += 4) {
            const float f = read_le_f32(p);
            require(std::isfinite(f), "'", path, "': row ", i, ": non-finite value in column ", j);
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f;
        }
    }
    return {std::move(ids), std::move(m)};
}

inline EmbeddingSet load_embeddings_csv(const std::string& path) {
    const auto table = csv::read_file(path);
    require(!table.header.empty() && table.header[0] == "sample_id", "'", path,
            "': malformed header (first column must be sample_id)");
    const std::size_t d = table.header.size() - 1;
    require(d >= 1, "'", path, "': malformed header (no feature columns)");
    for (std::size_t j = 0; j < d; ++j) {
        require(table.header[j + 1] == "f" + std::to_string(j), "'", path, "': malformed header (column ", j + 1,
                " is '", table.header[j + 1], "', expected 'f", j, "')");
    }
    require(!table.rows.empty(), "'", path, "': no data rows");
    std::vector<std::string> ids;
    Matrix m(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        require(row.size() == d + 1, "'", path, "': row ", i, ": dimension mismatch (", row.size() - 1,
                " values, expected ", d, ")");
        ids.push_back(row[0]);
        for (std::size_t j = 0; j < d; ++j) {
            const auto v = csv::parse_double(row[j + 1]);
            require(v.has_value(), "'", path, "': row ", i, ": unparseable value '", row[j + 1], "' in column f", j);
            require(std::isfinite(*v), "'", path, "': row ", i, ": non-finite value in column f", j);
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *v;
        }
    }
    return {std::move(ids), std::move(m)};
}

}  // namespace detail

/// Reads an embedding file. For the binary format the ids come from
/// `ids_path` (default: `<path>.ids`). Row order is preserved.
inline EmbeddingSet load_embeddings(const std::string& path, EmbeddingFormat format,
                                    const std::string& ids_path = {}) {
    try {
        if (format == EmbeddingFormat::Binary) {
            return detail::load_embeddings_binary(path, ids_path.empty() ? default_ids_path(path) : ids_path);
        }
        return detail::load_embeddings_csv(path);
    } catch (const Error& e) {
        const std::string what = e.what();
        if (what.find(path) != std::string::npos) throw;
        fail("'", path, "': ", what);
    }
}

/// Binary payloads are float32; values are narrowed on write.
inline void save_embeddings(const EmbeddingSet& set, const std::string& path, EmbeddingFormat format,
                            const std::string& ids_path = {}) {
    const auto& m = set.matrix();
    if (format == EmbeddingFormat::Binary) {
        std::string out(detail::kEmbeddingMagic.begin(), detail::kEmbeddingMagic.end());
        out.reserve(20 + 4 * static_cast<std::size_t>(m.size()));
        detail::write_le_u64(out, static_cast<std::uint64_t>(m.rows()));
        detail::write_le_u64(out, static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) detail::write_le_f32(out, static_cast<float>(m(i, j)));
        }
        csv::write_file(path, out);
        std::string ids;
        for (const auto& id : set.ids()) ids += id + "\n";
        csv::write_file(ids_path.empty() ? default_ids_path(path) : ids_path, ids);
        return;
    }
    std::string out = "sample_id";
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += ",f" + std::to_string(j);
    out += "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out += csv::quote(set.ids()[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < m.cols(); ++j) out += "," + csv::format_double(m(i, j));
        out += "\n";
    }
    csv::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Cohort

enum class Sex { Male, Female };
enum class Split { Train, Validation, Test };

enum class LabelValue : std::int8_t { Negative = 0, Positive = 1, Missing = -1 };

inline std::string_view to_string(Sex s) { return s == Sex::Male ? "Male" : "Female"; }

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Test: return "test";
    }
    return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "validation") return Split::Validation;
    if (s == "test") return Split::Test;
    return std::nullopt;
}

struct Sample {
    std::string sample_id;
    std::string patient_id;
    std::optional<Sex> sex;
    std::string race;  // empty = missing
    double age = 0.0;
    std::vector<LabelValue> labels;  // parallel to Cohort::label_names()
    Split split = Split::Train;
};

/// Per-scan metadata keyed by sample id. Immutable after construction.
class Cohort {
public:
    Cohort() = default;

    Cohort(std::vector<std::string> label_names, std::vector<Sample> samples)
        : label_names_(std::move(label_names)), samples_(std::move(samples)) {
        std::set<std::string> seen_labels;
        for (const auto& l : label_names_) {
            require(!l.empty(), "empty label name");
            require(seen_labels.insert(l).second, "duplicate label '", l, "'");
        }
        index_.reserve(samples_.size());
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const auto& s = samples_[i];
            require(!s.sample_id.empty(), "row ", i, ": empty sample_id");
            require(!s.patient_id.empty(), "row ", i, ": empty patient_id");
            require(std::isfinite(s.age) && s.age >= 0.0 && s.age <= 130.0, "row ", i, ", column age: ", s.age,
                    " outside [0, 130]");
            require(s.labels.size() == label_names_.size(), "row ", i, ": ", s.labels.size(), " label values for ",
                    label_names_.size(), " labels");
            const auto [it, inserted] = index_.emplace(s.sample_id, i);
            require(inserted, "row ", i, ": duplicate sample_id '", s.sample_id, "'");
        }
    }

    [[nodiscard]] std::size_t size() const { return samples_.size(); }
    [[nodiscard]] bool empty() const { return samples_.empty(); }
    [[nodiscard]] const std::vector<Sample>& samples() const { return samples_; }
    [[nodiscard]] const Sample& operator[](std::size_t i) const { return samples_.at(i); }
    [[nodiscard]] const std::vector<std::string>& label_names() const { return label_names_; }

    [[nodiscard]] std::optional<std::size_t> find(const std::string& id) const {
        const auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] const Sample& at(const std::string& id) const {
        const auto i = find(id);
        require(i.has_value(), "sample id '", id, "' not present in cohort");
        return samples_[*i];
    }

    [[nodiscard]] std::size_t label_index(std::string_view name) const {
        for (std::size_t i = 0; i < label_names_.size(); ++i) {
            if (label_names_[i] == name) return i;
        }
        fail("unknown label '", name, "'");
    }

    [[nodiscard]] bool has_label(std::string_view name) const {
        return std::find(label_names_.begin(), label_names_.end(), name) != label_names_.end();
    }

    [[nodiscard]] Cohort subset(std::span<const std::size_t> rows) const {
        std::vector<Sample> out;
        out.reserve(rows.size());
        for (auto r : rows) out.push_back(samples_.at(r));
        return {label_names_, std::move(out)};
    }

    /// Samples in the order of `ids`; every id must be present.
    [[nodiscard]] Cohort select(std::span<const std::string> ids) const {
        std::vector<std::size_t> rows;
        rows.reserve(ids.size());
        for (const auto& id : ids) {
            const auto r = find(id);
            require(r.has_value(), "sample id '", id, "' not present in cohort");
            rows.push_back(*r);
        }
        return subset(rows);
    }

    [[nodiscard]] Cohort filter_split(Split split) const {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            if (samples_[i].split == split) rows.push_back(i);
        }
        return subset(rows);
    }

    /// Joint-use check: every embedding id must have metadata.
    void require_covers(const EmbeddingSet& emb) const {
        for (std::size_t i = 0; i < emb.rows(); ++i) {
            require(find(emb.ids()[i]).has_value(), "embedding row ", i, ": sample id '", emb.ids()[i],
                    "' has no cohort metadata");
        }
    }

private:
    std::vector<std::string> label_names_;
    std::vector<Sample> samples_;
    std::unordered_map<std::string, std::size_t> index_;
};

using WarningSink = std::function<void(const std::string&)>;

inline void warn_to_stderr(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

/// Reads the metadata CSV. Rows are numbered from 1 (first data row) in
/// error messages.
inline Cohort load_cohort(const std::string& path, const WarningSink& warn = warn_to_stderr) {
    const auto table = csv::read_file(path);
    constexpr std::array<std::string_view, 6> required{"sample_id", "patient_id", "sex", "race", "age", "split"};
    std::array<std::size_t, 6> col{};
    for (std::size_t r = 0; r < required.size(); ++r) {
        const auto it = std::find(table.header.begin(), table.header.end(), required[r]);
        require(it != table.header.end(), "'", path, "': missing required column '", required[r], "'");
        col[r] = static_cast<std::size_t>(it - table.header.begin());
    }
    std::vector<std::string> label_names;
    std::vector<std::size_t> label_cols;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        const auto& h = table.header[c];
        if (std::find(required.begin(), required.end(), h) != required.end()) continue;
        if (h.rfind("label_", 0) == 0 && h.size() > 6) {
            label_names.push_back(h.substr(6));
            label_cols.push_back(c);
        } else if (warn) {
            warn("'" + path + "': ignoring unknown column '" + h + "'");
        }
    }

    std::vector<Sample> samples;
    samples.reserve(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const std::size_t rownum = i + 1;
        require(row.size() == table.header.size(), "'", path, "': row ", rownum, ": ", row.size(), " fields, expected ",
                table.header.size());
        Sample s;
        s.sample_id = row[col[0]];
        s.patient_id = row[col[1]];
        const auto& sex = row[col[2]];
        if (sex == "Male") {
            s.sex = Sex::Male;
        } else if (sex == "Female") {
            s.sex = Sex::Female;
        } else {
            require(sex.empty(), "'", path, "': row ", rownum, ", column sex: '", sex, "' is not Male or Female");
        }
        s.race = row[col[3]];
        const auto age = csv::parse_double(row[col[4]]);
        require(age.has_value() && std::isfinite(*age), "'", path, "': row ", rownum, ", column age: unparseable value '",
                row[col[4]], "'");
        require(*age >= 0.0 && *age <= 130.0, "'", path, "': row ", rownum, ", column age: ", *age,
                " outside [0, 130]");
        s.age = *age;
        const auto split = parse_split(row[col[5]]);
        require(split.has_value(), "'", path, "': row ", rownum, ", column split: '", row[col[5]],
                "' is not train, validation or test");
        s.split = *split;
        for (std::size_t l = 0; l < label_cols.size(); ++l) {
            const auto& v = row[label_cols[l]];
            if (v.empty()) {
                s.labels.push_back(LabelValue::Missing);
            } else if (v == "0") {
                s.labels.push_back(LabelValue::Negative);
            } else if (v == "1") {
                s.labels.push_back(LabelValue::Positive);
            } else {
                fail("'", path, "': row ", rownum, ", column label_", label_names[l], ": value '", v,
                     "' is not 0, 1 or empty");
            }
        }
        samples.push_back(std::move(s));
    }
    try {
        return {std::move(label_names), std::move(samples)};
    } catch (const Error& e) {
        fail("'", path, "': ", e.what());
    }
}

inline void save_cohort(const Cohort& cohort, const std::string& path) {
    std::string out = "sample_id,patient_id,sex,race,age,split";
    for (const auto& l : cohort.label_names()) out += ",label_" + l;
    out += "\n";
    for (const auto& s : cohort.samples()) {
        out += csv::join({s.sample_id, s.patient_id, s.sex ? std::string(to_string(*s.sex)) : std::string{}, s.race,
                          csv::format_double(s.age), std::string(to_string(s.split))});
        for (auto v : s.labels) {
            out += ",";
            if (v != LabelValue::Missing) out += v == LabelValue::Positive ? "1" : "0";
        }
        out += "\n";
    }
    csv::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Group selection

enum class Attribute { Sex, Race, Label };

struct GroupSelector {
    Attribute attribute = Attribute::Sex;
    std::string label;  // label name when attribute == Label
    std::string value;  // "Male", "White", "1", ...

    /// Parses "sex=Female", "race=Black" or "label:no_finding=1".
    static GroupSelector parse(std::string_view text) {
        const auto eq = text.find('=');
        require(eq != std::string_view::npos && eq + 1 < text.size(), "group selector '", text,
                "' must look like attribute=value");
        const auto key = text.substr(0, eq);
        GroupSelector g;
        g.value = std::string(text.substr(eq + 1));
        if (key == "sex") {
            g.attribute = Attribute::Sex;
        } else if (key == "race") {
            g.attribute = Attribute::Race;
        } else if (key.rfind("label:", 0) == 0 && key.size() > 6) {
            g.attribute = Attribute::Label;
            g.label = std::string(key.substr(6));
            require(g.value == "0" || g.value == "1", "group selector '", text, "': label value must be 0 or 1");
        } else {
            fail("group selector '", text, "': unknown attribute '", key, "' (expected sex, race or label:<name>)");
        }
        return g;
    }

    [[nodiscard]] std::string to_string() const {
        switch (attribute) {
            case Attribute::Sex: return "sex=" + value;
            case Attribute::Race: return "race=" + value;
            case Attribute::Label: return "label:" + label + "=" + value;
        }
        return {};
    }

    /// Display name used in report columns ("Female", "no_finding").
    [[nodiscard]] std::string display_name() const {
        if (attribute == Attribute::Label) return value == "1" ? label : label + "=0";
        return value;
    }

    /// nullopt when the sample has no value for the attribute.
    [[nodiscard]] std::optional<bool> matches(const Cohort& cohort, const Sample& s) const {
        switch (attribute) {
            case Attribute::Sex:
                if (!s.sex) return std::nullopt;
                return biasaudit::to_string(*s.sex) == value;
            case Attribute::Race:
                if (s.race.empty()) return std::nullopt;
                return s.race == value;
            case Attribute::Label: {
                const auto v = s.labels[cohort.label_index(label)];
                if (v == LabelValue::Missing) return std::nullopt;
                return (v == LabelValue::Positive) == (value == "1");
            }
        }
        return std::nullopt;
    }

    friend bool operator==(const GroupSelector&, const GroupSelector&) = default;
};

/// Row indices (in cohort order) matching the selector. Samples missing the
/// attribute never match.
inline std::vector<std::size_t> select_rows(const Cohort& cohort, const GroupSelector& selector,
                                            bool require_nonempty = false) {
    if (selector.attribute == Attribute::Label) (void)cohort.label_index(selector.label);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto m = selector.matches(cohort, cohort[i]);
        if (m.value_or(false)) rows.push_back(i);
    }
    require(!require_nonempty || !rows.empty(), "group ", selector.to_string(), " is empty");
    return rows;
}

inline std::vector<std::string> select_group(const Cohort& cohort, const GroupSelector& selector,
                                             bool require_nonempty = false) {
    std::vector<std::string> ids;
    for (auto r : select_rows(cohort, selector, require_nonempty)) ids.push_back(cohort[r].sample_id);
    return ids;
}

/// Observed values of a categorical attribute, most frequent first (ties by
/// name). Sex is always Male, Female.
inline std::vector<std::string> attribute_values(const Cohort& cohort, Attribute attribute) {
    if (attribute == Attribute::Sex) return {"Male", "Female"};
    require(attribute == Attribute::Race, "attribute_values: only sex and race are enumerable");
    std::map<std::string, std::size_t> counts;
    for (const auto& s : cohort.samples()) {
        if (!s.race.empty()) ++counts[s.race];
    }
    std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    for (auto& [name, n] : v) out.push_back(name);
    return out;
}

// ---------------------------------------------------------------------------
// Cohort summary (demographics table)

struct SummaryColumn {
    std::string name;
    std::size_t patients = 0;
    std::size_t scans = 0;
    double scans_pct = 0.0;  // of the section's total scans
    double age_mean = 0.0;
    double age_sd = 0.0;
    std::optional<std::size_t> female;  // absent for sex-split columns
    std::vector<std::size_t> label_positive;
};

struct SummarySection {
    std::string title;
    std::vector<SummaryColumn> columns;
};

struct CohortSummary {
    std::vector<std::string> label_names;
    std::vector<SummarySection> sections;
};

namespace detail {

inline SummaryColumn summarize_rows(const Cohort& cohort, std::span<const std::size_t> rows, std::string name,
                                    std::size_t section_scans, bool report_female) {
    SummaryColumn col;
    col.name = std::move(name);
    col.scans = rows.size();
    col.scans_pct = section_scans ? 100.0 * static_cast<double>(rows.size()) / static_cast<double>(section_scans) : 0.0;
    col.label_positive.assign(cohort.label_names().size(), 0);
    std::set<std::string> patients;
    double sum = 0.0;
    std::size_t female = 0;
    for (auto r : rows) {
        const auto& s = cohort[r];
        patients.insert(s.patient_id);
        sum += s.age;
        if (s.sex == Sex::Female) ++female;
        for (std::size_t l = 0; l < s.labels.size(); ++l) {
            if (s.labels[l] == LabelValue::Positive) ++col.label_positive[l];
        }
    }
    col.patients = patients.size();
    if (!rows.empty()) {
        col.age_mean = sum / static_cast<double>(rows.size());
        double ss = 0.0;
        for (auto r : rows) ss += (cohort[r].age - col.age_mean) * (cohort[r].age - col.age_mean);
        col.age_sd = rows.size() > 1 ? std::sqrt(ss / static_cast<double>(rows.size() - 1)) : 0.0;
    }
    if (report_female) col.female = female;
    return col;
}

inline std::string pct_cell(std::size_t count, std::size_t total) {
    const double pct = total ? 100.0 * static_cast<double>(count) / static_cast<double>(total) : 0.0;
    return std::to_string(count) + " (" + csv::format_fixed(pct, 0) + ")";
}

}  // namespace detail

/// Demographics per split (plus an all-data section): one "All" column and one
/// column per value of each grouping attribute. Percentages are relative to
/// scan counts.
inline CohortSummary summarize_cohort(const Cohort& cohort, std::span<const Attribute> group_by) {
    require(!cohort.empty(), "summarize_cohort: empty cohort");
    CohortSummary out;
    out.label_names = cohort.label_names();

    struct Part {
        std::string title;
        std::optional<Split> split;
    };
    const std::array<Part, 4> parts{Part{"All data", std::nullopt}, Part{"Training data", Split::Train},
                                    Part{"Validation data", Split::Validation}, Part{"Test data", Split::Test}};
    std::vector<std::pair<Attribute, std::vector<std::string>>> groupings;
    for (auto a : group_by) {
        require(a != Attribute::Label, "summarize_cohort: grouping by label is not supported");
        groupings.emplace_back(a, attribute_values(cohort, a));
    }

    for (const auto& part : parts) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < cohort.size(); ++i) {
            if (!part.split || cohort[i].split == *part.split) rows.push_back(i);
        }
        SummarySection section;
        section.title = part.title;
        section.columns.push_back(detail::summarize_rows(cohort, rows, "All", rows.size(), true));
        for (const auto& [attr, values] : groupings) {
            for (const auto& v : values) {
                const GroupSelector sel{attr, {}, v};
                std::vector<std::size_t> members;
                for (auto r : rows) {
                    if (sel.matches(cohort, cohort[r]).value_or(false)) members.push_back(r);
                }
                section.columns.push_back(
                    detail::summarize_rows(cohort, members, v, rows.size(), attr != Attribute::Sex));
            }
        }
        out.sections.push_back(std::move(section));
    }
    return out;
}

inline std::string age_cell(const SummaryColumn& c) {
    if (c.scans == 0) return "-";
    return csv::format_fixed(c.age_mean, 0) + " \xC2\xB1 " + csv::format_fixed(c.age_sd, 0);
}

inline std::string female_cell(const SummaryColumn& c) {
    if (!c.female) return "-";
    return detail::pct_cell(*c.female, c.scans);
}

inline std::string scans_cell(const SummaryColumn& c, bool is_all) {
    if (is_all) return std::to_string(c.scans);
    return std::to_string(c.scans) + " (" + csv::format_fixed(c.scans_pct, 0) + ")";
}

/// CSV rendering: one block per section, rows Patients / Scans / Age / Female
/// / one per label.
inline std::string render_summary_csv(const CohortSummary& summary) {
    std::string out;
    for (const auto& section : summary.sections) {
        csv::Row header{section.title};
        for (const auto& c : section.columns) header.push_back(c.name);
        out += csv::join(header) + "\n";

        auto emit = [&](const std::string& label, auto&& cell) {
            csv::Row row{label};
            for (std::size_t i = 0; i < section.columns.size(); ++i) row.push_back(cell(section.columns[i], i == 0));
            out += csv::join(row) + "\n";
        };
        emit("Patients", [](const SummaryColumn& c, bool) { return std::to_string(c.patients); });
        emit("Scans", [](const SummaryColumn& c, bool all) { return scans_cell(c, all); });
        emit("Age (years)", [](const SummaryColumn& c, bool) { return age_cell(c); });
        emit("Female", [](const SummaryColumn& c, bool) { return female_cell(c); });
        for (std::size_t l = 0; l < summary.label_names.size(); ++l) {
            emit(summary.label_names[l],
                 [l](const SummaryColumn& c, bool) { return detail::pct_cell(c.label_positive[l], c.scans); });
        }
    }
    return out;
}

}  // namespace biasaudit

#include "ivgap/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ivgap/projection.hpp"

namespace ivgap {

using nlohmann::json;

std::string to_string(Mode m) { return m == Mode::standard ? "standard" : "did-rd"; }

Mode parse_mode(std::string_view s) {
    if (s == "standard") return Mode::standard;
    if (s == "did-rd" || s == "did_rd" || s == "didrd") return Mode::did_rd;
    throw UserError("unknown mode '" + std::string(s) + "' (expected standard or did-rd)");
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool is_missing_token(std::string_view s) {
    s = trim(s);
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".";
}

}  // namespace

CategoricalColumn CategoricalColumn::from_labels(const std::vector<std::string>& labels) {
    CategoricalColumn c;
    std::set<std::string> uniq(labels.begin(), labels.end());
    c.levels.assign(uniq.begin(), uniq.end());
    std::vector<double> vals(c.levels.size());
    bool numeric = true;
    for (std::size_t i = 0; i < c.levels.size() && numeric; ++i)
        numeric = parse_double(c.levels[i], vals[i]) && std::isfinite(vals[i]);
    if (numeric) {
        std::vector<std::size_t> idx(c.levels.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        std::vector<std::string> sorted;
        for (auto i : idx) sorted.push_back(c.levels[i]);
        c.levels = std::move(sorted);
    }
    std::unordered_map<std::string, int> code;
    for (std::size_t i = 0; i < c.levels.size(); ++i) code[c.levels[i]] = static_cast<int>(i);
    c.codes.reserve(labels.size());
    for (const auto& l : labels) c.codes.push_back(code[l]);
    return c;
}

Dataset::Dataset(std::vector<std::string> names, std::vector<ColumnData> columns, std::size_t dropped)
    : names_(std::move(names)), columns_(std::move(columns)), dropped_(dropped) {
    if (names_.size() != columns_.size()) throw UserError("dataset: name/column count mismatch");
    std::set<std::string> seen;
    for (std::size_t j = 0; j < columns_.size(); ++j) {
        if (!seen.insert(names_[j]).second) throw UserError("dataset: duplicate column '" + names_[j] + "'");
        std::size_t len = std::visit(
            [&](const auto& c) -> std::size_t {
                using T = std::decay_t<decltype(c)>;
                if constexpr (std::is_same_v<T, NumericColumn>) {
                    for (double v : c.values)
                        if (!std::isfinite(v)) throw UserError("dataset: non-finite value in '" + names_[j] + "'");
                    return c.values.size();
                } else {
                    if (c.levels.empty() && !c.codes.empty())
                        throw UserError("dataset: categorical column '" + names_[j] + "' has no levels");
                    for (int k : c.codes)
                        if (k < 0 || static_cast<std::size_t>(k) >= c.levels.size())
                            throw UserError("dataset: bad level code in '" + names_[j] + "'");
                    return c.codes.size();
                }
            },
            columns_[j]);
        if (j == 0) n_ = len;
        else if (len != n_) throw UserError("dataset: column '" + names_[j] + "' has wrong length");
    }
}

std::size_t Dataset::index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw UserError("column '" + name + "' not found");
    return static_cast<std::size_t>(it - names_.begin());
}

bool Dataset::has(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const ColumnData& Dataset::column(const std::string& name) const { return columns_[index(name)]; }

ColumnType Dataset::type(const std::string& name) const {
    return std::holds_alternative<NumericColumn>(column(name)) ? ColumnType::numeric : ColumnType::categorical;
}

const std::vector<double>& Dataset::numeric(const std::string& name) const {
    const auto* c = std::get_if<NumericColumn>(&column(name));
    if (!c) throw UserError("column '" + name + "' is categorical, numeric required");
    return c->values;
}

const CategoricalColumn& Dataset::categorical(const std::string& name) const {
    const auto* c = std::get_if<CategoricalColumn>(&column(name));
    if (!c) throw UserError("column '" + name + "' is numeric, categorical required");
    return *c;
}

std::string Dataset::text(const std::string& name, std::size_t row) const {
    const auto& c = column(name);
    if (const auto* num = std::get_if<NumericColumn>(&c)) return format_number(num->values[row]);
    return std::get<CategoricalColumn>(c).label(row);
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
    std::vector<ColumnData> cols;
    for (const auto& c : columns_) {
        if (const auto* num = std::get_if<NumericColumn>(&c)) {
            NumericColumn out;
            for (auto r : rows) out.values.push_back(num->values.at(r));
            cols.emplace_back(std::move(out));
        } else {
            const auto& cat = std::get<CategoricalColumn>(c);
            CategoricalColumn out;
            out.levels = cat.levels;
            for (auto r : rows) out.codes.push_back(cat.codes.at(r));
            cols.emplace_back(std::move(out));
        }
    }
    return Dataset(names_, std::move(cols), dropped_);
}

Dataset load_csv(const std::string& path, const Schema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot open data file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str(), schema, path);
}

Dataset parse_csv(const std::string& text, const Schema& schema, const std::string& source) {
    std::vector<std::string> header;
    std::vector<int> role;  // header index -> schema slot or -1
    std::vector<std::string> slotNames;
    std::vector<ColumnType> slotTypes;
    for (const auto& [name, type] : schema) {
        slotNames.push_back(name);
        slotTypes.push_back(type);
    }
    std::vector<std::vector<double>> num(slotNames.size());
    std::vector<std::vector<std::string>> cat(slotNames.size());
    std::vector<std::string> fields;
    std::size_t dropped = 0, dataRow = 0;
    bool haveHeader = false;

    auto finish_record = [&]() {
        if (!haveHeader) {
            header = fields;
            if (!header.empty() && header[0].size() >= 3 && header[0].compare(0, 3, "\xEF\xBB\xBF") == 0)
                header[0].erase(0, 3);
            for (auto& h : header) h = std::string(trim(h));
            role.assign(header.size(), -1);
            for (std::size_t s = 0; s < slotNames.size(); ++s) {
                auto it = std::find(header.begin(), header.end(), slotNames[s]);
                if (it == header.end())
                    throw UserError("schema error: column '" + slotNames[s] + "' missing from " + source);
                role[static_cast<std::size_t>(it - header.begin())] = static_cast<int>(s);
            }
            haveHeader = true;
            return;
        }
        ++dataRow;
        if (fields.size() == 1 && fields[0].empty()) return;  // blank line
        if (fields.size() != header.size())
            throw UserError("ingestion error: row " + std::to_string(dataRow) + " of " + source + " has " +
                            std::to_string(fields.size()) + " fields, header has " + std::to_string(header.size()));
        bool missing = false;
        std::vector<double> rowNum(slotNames.size());
        for (std::size_t j = 0; j < fields.size(); ++j) {
            int s = role[j];
            if (s < 0) continue;
            const std::string& f = fields[j];
            if (is_missing_token(f)) {
                missing = true;
                continue;
            }
            if (slotTypes[static_cast<std::size_t>(s)] == ColumnType::numeric) {
                double v;
                if (!parse_double(f, v)) {
                    auto sv = trim(f);
                    // inf/nan spellings parse but count as missing
                    throw UserError("ingestion error: row " + std::to_string(dataRow) + ", column '" +
                                    slotNames[static_cast<std::size_t>(s)] + "': cannot parse '" + std::string(sv) + "'");
                }
                if (!std::isfinite(v)) missing = true;
                rowNum[static_cast<std::size_t>(s)] = v;
            }
        }
        if (missing) {
            ++dropped;
            return;
        }
        for (std::size_t j = 0; j < fields.size(); ++j) {
            int s = role[j];
            if (s < 0) continue;
            auto su = static_cast<std::size_t>(s);
            if (slotTypes[su] == ColumnType::numeric) num[su].push_back(rowNum[su]);
            else cat[su].emplace_back(trim(fields[j]));
        }
    };

    std::string field;
    bool inQuotes = false, fieldStarted = false;
    const std::size_t len = text.size();
    for (std::size_t i = 0; i < len; ++i) {
        char c = text[i];
        if (inQuotes) {
            if (c == '"') {
                if (i + 1 < len && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    inQuotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"' && !fieldStarted) {
            inQuotes = true;
            fieldStarted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
            fieldStarted = false;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < len && text[i + 1] == '\n') ++i;
            fields.push_back(std::move(field));
            field.clear();
            fieldStarted = false;
            finish_record();
            fields.clear();
        } else {
            field += c;
            fieldStarted = true;
        }
    }
    if (inQuotes) throw UserError("ingestion error: unterminated quoted field in " + source);
    if (fieldStarted || !fields.empty()) {
        fields.push_back(std::move(field));
        finish_record();
    }
    if (!haveHeader) throw UserError("ingestion error: " + source + " has no header row");

    std::vector<std::string> names;
    std::vector<ColumnData> cols;
    for (std::size_t s = 0; s < slotNames.size(); ++s) {
        names.push_back(slotNames[s]);
        if (slotTypes[s] == ColumnType::numeric) cols.emplace_back(NumericColumn{std::move(num[s])});
        else cols.emplace_back(CategoricalColumn::from_labels(cat[s]));
    }
    return Dataset(std::move(names), std::move(cols), dropped);
}

namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string write_csv(const Dataset& d) {
    std::string out;
    std::vector<std::string> escaped;
    for (const auto& nme : d.names()) escaped.push_back(csv_escape(nme));
    out += join(escaped, ",") + "\n";
    for (std::size_t i = 0; i < d.n(); ++i) {
        for (std::size_t j = 0; j < d.names().size(); ++j) {
            if (j) out += ',';
            out += csv_escape(d.text(d.names()[j], i));
        }
        out += '\n';
    }
    return out;
}

// ---- terms ----

namespace {

const std::vector<std::pair<TermKind, std::string>> kKindNames = {
    {TermKind::intercept, "intercept"},       {TermKind::numeric, "numeric"},
    {TermKind::categorical, "categorical"},   {TermKind::interaction, "interaction"},
    {TermKind::piecewise_linear, "piecewise_linear"}, {TermKind::polynomial, "polynomial"},
    {TermKind::step, "step"}};

TermKind kind_from(const std::string& s) {
    for (const auto& [k, n] : kKindNames)
        if (n == s) return k;
    if (s == "categorical-dummies" || s == "dummies") return TermKind::categorical;
    if (s == "piecewise-linear") return TermKind::piecewise_linear;
    if (s == "step-indicators") return TermKind::step;
    throw UserError("unknown term kind '" + s + "'");
}

std::string kind_name(TermKind k) {
    for (const auto& [kk, n] : kKindNames)
        if (kk == k) return n;
    return "?";
}

}  // namespace

void TermSpec::validate() const {
    switch (kind) {
        case TermKind::intercept: return;
        case TermKind::interaction:
            if (columns.size() < 2) throw UserError("interaction term needs at least 2 columns");
            return;
        case TermKind::piecewise_linear:
            if (columns.size() != 1) throw UserError("piecewise_linear term needs exactly one column");
            for (std::size_t i = 1; i < knots.size(); ++i)
                if (!(knots[i] > knots[i - 1])) throw UserError("piecewise_linear knots must be strictly increasing");
            return;
        case TermKind::polynomial:
            if (columns.size() != 1) throw UserError("polynomial term needs exactly one column");
            if (degree < 1) throw UserError("polynomial degree must be at least 1");
            return;
        case TermKind::step:
            if (columns.size() != 1) throw UserError("step term needs exactly one column");
            for (std::size_t i = 1; i < knots.size(); ++i)
                if (!(knots[i] > knots[i - 1])) throw UserError("step thresholds must be strictly increasing");
            return;
        default:
            if (columns.size() != 1) throw UserError(kind_name(kind) + " term needs exactly one column");
    }
}

TermSpec TermSpec::from_json(const json& j) {
    TermSpec t;
    if (j.is_string()) {
        // bare column name means a numeric term
        t.kind = TermKind::numeric;
        t.columns = {j.get<std::string>()};
        return t;
    }
    if (!j.is_object()) throw UserError("term spec must be an object or a column name");
    t.kind = kind_from(j.value("kind", std::string("numeric")));
    if (j.contains("column")) t.columns = {j.at("column").get<std::string>()};
    if (j.contains("columns")) t.columns = j.at("columns").get<std::vector<std::string>>();
    if (j.contains("knots")) t.knots = j.at("knots").get<std::vector<double>>();
    if (j.contains("thresholds")) t.knots = j.at("thresholds").get<std::vector<double>>();
    if (j.contains("degree")) t.degree = j.at("degree").get<int>();
    if (j.contains("categorical")) t.categorical = j.at("categorical").get<std::vector<std::string>>();
    t.validate();
    return t;
}

json TermSpec::to_json() const {
    json j;
    j["kind"] = kind_name(kind);
    if (columns.size() == 1 && kind != TermKind::interaction) j["column"] = columns[0];
    else if (!columns.empty()) j["columns"] = columns;
    if (kind == TermKind::piecewise_linear) j["knots"] = knots;
    if (kind == TermKind::step) j["thresholds"] = knots;
    if (kind == TermKind::polynomial) j["degree"] = degree;
    if (!categorical.empty()) j["categorical"] = categorical;
    return j;
}

namespace {

struct Block {
    std::vector<std::vector<double>> cols;
    std::vector<std::string> names;
};

Block dummies(const Dataset& d, const std::string& col) {
    Block b;
    if (d.type(col) == ColumnType::numeric) {
        // numeric column coded on the fly
        std::vector<std::string> labels;
        for (std::size_t i = 0; i < d.n(); ++i) labels.push_back(d.text(col, i));
        auto c = CategoricalColumn::from_labels(labels);
        for (std::size_t l = 1; l < c.levels.size(); ++l) {
            std::vector<double> v(d.n());
            for (std::size_t i = 0; i < d.n(); ++i) v[i] = c.codes[i] == static_cast<int>(l) ? 1.0 : 0.0;
            b.cols.push_back(std::move(v));
            b.names.push_back(col + "[" + c.levels[l] + "]");
        }
        return b;
    }
    const auto& c = d.categorical(col);
    for (std::size_t l = 1; l < c.levels.size(); ++l) {
        std::vector<double> v(d.n());
        for (std::size_t i = 0; i < d.n(); ++i) v[i] = c.codes[i] == static_cast<int>(l) ? 1.0 : 0.0;
        b.cols.push_back(std::move(v));
        b.names.push_back(col + "[" + c.levels[l] + "]");
    }
    return b;
}

Block numeric_block(const Dataset& d, const std::string& col) {
    return Block{{d.numeric(col)}, {col}};
}

Block expand_one(const Dataset& d, const TermSpec& t) {
    t.validate();
    for (const auto& c : t.columns)
        if (!d.has(c)) throw UserError("term references missing column '" + c + "'");
    switch (t.kind) {
        case TermKind::intercept: return {};
        case TermKind::numeric: return numeric_block(d, t.columns[0]);
        case TermKind::categorical:
            if (d.type(t.columns[0]) != ColumnType::categorical)
                throw UserError("categorical term references numeric column '" + t.columns[0] + "'");
            return dummies(d, t.columns[0]);
        case TermKind::interaction: {
            Block acc{{std::vector<double>(d.n(), 1.0)}, {""}};
            for (const auto& c : t.columns) {
                bool isCat = d.type(c) == ColumnType::categorical ||
                             std::find(t.categorical.begin(), t.categorical.end(), c) != t.categorical.end();
                Block m = isCat ? dummies(d, c) : numeric_block(d, c);
                Block next;
                for (std::size_t a = 0; a < acc.cols.size(); ++a)
                    for (std::size_t b = 0; b < m.cols.size(); ++b) {
                        std::vector<double> v(d.n());
                        for (std::size_t i = 0; i < d.n(); ++i) v[i] = acc.cols[a][i] * m.cols[b][i];
                        next.cols.push_back(std::move(v));
                        next.names.push_back(acc.names[a].empty() ? m.names[b] : acc.names[a] + ":" + m.names[b]);
                    }
                acc = std::move(next);
            }
            return acc;
        }
        case TermKind::piecewise_linear: {
            const auto& v = d.numeric(t.columns[0]);
            Block b = numeric_block(d, t.columns[0]);
            for (double k : t.knots) {
                std::vector<double> h(d.n());
                for (std::size_t i = 0; i < d.n(); ++i) h[i] = std::max(v[i] - k, 0.0);
                b.cols.push_back(std::move(h));
                b.names.push_back("max(" + t.columns[0] + "-" + format_number(k) + ",0)");
            }
            return b;
        }
        case TermKind::polynomial: {
            const auto& v = d.numeric(t.columns[0]);
            Block b;
            for (int p = 1; p <= t.degree; ++p) {
                std::vector<double> h(d.n());
                for (std::size_t i = 0; i < d.n(); ++i) h[i] = std::pow(v[i], p);
                b.cols.push_back(std::move(h));
                b.names.push_back(p == 1 ? t.columns[0] : t.columns[0] + "^" + std::to_string(p));
            }
            return b;
        }
        case TermKind::step: {
            const auto& v = d.numeric(t.columns[0]);
            Block b;
            for (double k : t.knots) {
                std::vector<double> h(d.n());
                for (std::size_t i = 0; i < d.n(); ++i) h[i] = v[i] >= k ? 1.0 : 0.0;
                b.cols.push_back(std::move(h));
                b.names.push_back(t.columns[0] + ">=" + format_number(k));
            }
            return b;
        }
    }
    return {};
}

}  // namespace

DesignMatrix expand_terms(const Dataset& d, const std::vector<TermSpec>& terms, bool checkRank) {
    std::vector<Block> blocks;
    std::size_t k = 1;
    for (const auto& t : terms) {
        if (t.kind == TermKind::intercept) continue;
        blocks.push_back(expand_one(d, t));
        k += blocks.back().cols.size();
    }
    DesignMatrix m;
    m.values.resize(static_cast<Eigen::Index>(d.n()), static_cast<Eigen::Index>(k));
    m.values.col(0).setOnes();
    m.names.push_back("(intercept)");
    Eigen::Index j = 1;
    for (auto& b : blocks)
        for (std::size_t c = 0; c < b.cols.size(); ++c, ++j) {
            m.values.col(j) = Eigen::Map<const Eigen::VectorXd>(b.cols[c].data(), static_cast<Eigen::Index>(d.n()));
            m.names.push_back(b.names[c]);
        }
    if (checkRank && d.n() > 0) {
        Eigen::VectorXd norms = m.values.colwise().norm().transpose();
        auto dep = ordered_dependent_columns(m.values, norms);
        if (!dep.empty()) {
            std::vector<std::string> cols;
            for (int c : dep) cols.push_back(m.names[static_cast<std::size_t>(c)]);
            throw RankError("covariate design is rank deficient; dependent columns: " + join(cols, ", "), cols);
        }
    }
    return m;
}

// ---- model config ----

ModelConfig ModelConfig::from_json(const json& j) {
    if (!j.is_object()) throw UserError("model configuration must be a JSON object");
    ModelConfig c;
    try {
        c.outcome = j.at("outcome").get<std::string>();
        c.treatment = j.at("treatment").get<std::string>();
        const auto& ins = j.at("instruments");
        if (ins.is_string()) c.instruments = {ins.get<std::string>()};
        else c.instruments = ins.get<std::vector<std::string>>();
        if (j.contains("covariates"))
            for (const auto& t : j.at("covariates")) c.covariates.push_back(TermSpec::from_json(t));
        if (j.contains("weights") && !j.at("weights").is_null()) c.weights = j.at("weights").get<std::string>();
        if (j.contains("cluster") && !j.at("cluster").is_null()) c.cluster = j.at("cluster").get<std::string>();
        c.mode = j.value("mode", std::string("auto"));
        if (j.contains("cell")) {
            const auto& ce = j.at("cell");
            if (ce.is_string()) c.cell = {ce.get<std::string>()};
            else c.cell = ce.get<std::vector<std::string>>();
        }
        if (j.contains("slope_heterogeneity")) c.slopeHeterogeneity = j.at("slope_heterogeneity");
        if (j.contains("basis")) c.basis = j.at("basis");
        if (j.contains("groups"))
            for (const auto& g : j.at("groups")) {
                GroupSpec gs;
                if (g.is_string()) {
                    gs.name = g.get<std::string>();
                    gs.columns = {gs.name};
                } else {
                    gs.columns = g.at("columns").get<std::vector<std::string>>();
                    gs.name = g.value("name", join(gs.columns, "|"));
                }
                c.groups.push_back(gs);
            }
    } catch (const json::exception& e) {
        throw UserError(std::string("model configuration: ") + e.what());
    }
    if (c.instruments.empty()) throw UserError("model configuration: at least one instrument is required");
    if (c.mode != "auto") parse_mode(c.mode);
    return c;
}

ModelConfig ModelConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot open model configuration '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw UserError("model configuration '" + path + "': " + e.what());
    }
    return from_json(j);
}

json ModelConfig::to_json() const {
    json j;
    j["outcome"] = outcome;
    j["treatment"] = treatment;
    j["instruments"] = instruments;
    j["covariates"] = json::array();
    for (const auto& t : covariates) j["covariates"].push_back(t.to_json());
    j["weights"] = weights ? json(*weights) : json(nullptr);
    j["cluster"] = cluster ? json(*cluster) : json(nullptr);
    j["mode"] = mode;
    if (!cell.empty()) j["cell"] = cell;
    j["slope_heterogeneity"] = slopeHeterogeneity;
    j["basis"] = basis;
    j["groups"] = json::array();
    for (const auto& g : groups) j["groups"].push_back({{"name", g.name}, {"columns", g.columns}});
    return j;
}

Schema ModelConfig::schema() const {
    Schema s;
    auto put = [&](const std::string& name, ColumnType t) {
        auto it = s.find(name);
        if (it != s.end() && it->second != t)
            throw UserError("column '" + name + "' is used both as numeric and as categorical");
        s[name] = t;
    };
    put(outcome, ColumnType::numeric);
    put(treatment, ColumnType::numeric);
    for (const auto& z : instruments) put(z, ColumnType::numeric);
    if (weights) put(*weights, ColumnType::numeric);
    for (const auto& t : covariates) {
        switch (t.kind) {
            case TermKind::intercept: break;
            case TermKind::categorical: put(t.columns[0], ColumnType::categorical); break;
            case TermKind::interaction:
                for (const auto& c : t.columns) {
                    bool isCat = std::find(t.categorical.begin(), t.categorical.end(), c) != t.categorical.end();
                    if (!isCat) put(c, ColumnType::numeric);
                }
                break;
            default: put(t.columns[0], ColumnType::numeric);
        }
    }
    // interaction members flagged categorical may be numeric elsewhere; otherwise read as labels
    for (const auto& t : covariates)
        if (t.kind == TermKind::interaction)
            for (const auto& c : t.categorical)
                if (!s.count(c)) s[c] = ColumnType::categorical;
    if (cluster && !s.count(*cluster)) s[*cluster] = ColumnType::categorical;
    for (const auto& g : groups)
        for (const auto& c : g.columns)
            if (!s.count(c)) s[c] = ColumnType::categorical;
    for (const auto& c : cell)
        if (!s.count(c)) s[c] = ColumnType::categorical;
    return s;
}

// ---- clusters ----

ClusterIndex ClusterIndex::singletons(std::size_t n) {
    ClusterIndex c;
    c.codes.resize(n);
    std::iota(c.codes.begin(), c.codes.end(), 0);
    c.count = static_cast<int>(n);
    return c;
}

ClusterIndex ClusterIndex::from_labels(const std::vector<std::string>& labels) {
    auto cat = CategoricalColumn::from_labels(labels);
    ClusterIndex c;
    c.codes = std::move(cat.codes);
    c.count = static_cast<int>(cat.levels.size());
    return c;
}

ClusterIndex ClusterIndex::from_codes(const std::vector<int>& raw) {
    std::vector<int> sorted(raw);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    ClusterIndex c;
    c.codes.reserve(raw.size());
    for (int r : raw)
        c.codes.push_back(static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), r) - sorted.begin()));
    c.count = static_cast<int>(sorted.size());
    return c;
}

const Eigen::MatrixXd& ModelFrame::W() const { return projector->design(); }

Partition make_partition(const Dataset& d, const std::vector<std::string>& columns) {
    if (columns.empty()) throw UserError("partition needs at least one column");
    std::vector<std::string> labels(d.n());
    for (std::size_t i = 0; i < d.n(); ++i) {
        std::vector<std::string> parts;
        for (const auto& c : columns) parts.push_back(d.text(c, i));
        labels[i] = join(parts, "|");
    }
    auto cat = CategoricalColumn::from_labels(labels);
    return Partition{std::move(cat.levels), std::move(cat.codes)};
}

// ---- frame ----

namespace {

struct PatternCheck {
    double repeatedMass = 0.0;  // weight share of rows in W patterns with >1 positive-weight row
    double withinRatio = 1.0;   // max over instruments of within/total SS on those rows
};

PatternCheck within_pattern_variance(const Eigen::MatrixXd& W, const Eigen::MatrixXd& Z, const Eigen::VectorXd& w,
                                     const std::vector<int>* cells) {
    const Eigen::Index n = W.rows();
    std::vector<int> cell(static_cast<std::size_t>(n), -1);
    if (cells) {
        cell = *cells;
    } else {
        std::vector<std::uint64_t> h(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            std::uint64_t acc = 1469598103934665603ULL;
            for (Eigen::Index j = 0; j < W.cols(); ++j) {
                double v = W(i, j);
                if (v == 0.0) v = 0.0;  // fold -0
                std::uint64_t bits;
                std::memcpy(&bits, &v, sizeof bits);
                acc = (acc ^ bits) * 1099511628211ULL;
                acc ^= acc >> 29;
            }
            h[static_cast<std::size_t>(i)] = acc;
        }
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            auto ha = h[static_cast<std::size_t>(a)], hb = h[static_cast<std::size_t>(b)];
            return ha != hb ? ha < hb : a < b;
        });
        int next = 0;
        std::size_t s = 0;
        while (s < order.size()) {
            std::size_t e = s;
            while (e < order.size() && h[static_cast<std::size_t>(order[e])] == h[static_cast<std::size_t>(order[s])]) ++e;
            // split a hash run by exact row equality
            std::vector<Eigen::Index> heads;
            std::vector<int> ids;
            for (std::size_t t = s; t < e; ++t) {
                Eigen::Index r = order[t];
                int id = -1;
                for (std::size_t q = 0; q < heads.size(); ++q)
                    if ((W.row(heads[q]).array() == W.row(r).array()).all()) {
                        id = ids[q];
                        break;
                    }
                if (id < 0) {
                    id = next++;
                    heads.push_back(r);
                    ids.push_back(id);
                }
                cell[static_cast<std::size_t>(r)] = id;
            }
            s = e;
        }
    }
    int ncell = 0;
    for (int c : cell) ncell = std::max(ncell, c + 1);
    std::vector<int> count(static_cast<std::size_t>(ncell), 0);
    std::vector<double> mass(static_cast<std::size_t>(ncell), 0.0);
    for (Eigen::Index i = 0; i < n; ++i)
        if (w(i) > 0) {
            ++count[static_cast<std::size_t>(cell[static_cast<std::size_t>(i)])];
            mass[static_cast<std::size_t>(cell[static_cast<std::size_t>(i)])] += w(i);
        }
    PatternCheck out;
    double total = w.sum(), rep = 0.0;
    for (int c = 0; c < ncell; ++c)
        if (count[static_cast<std::size_t>(c)] > 1) rep += mass[static_cast<std::size_t>(c)];
    out.repeatedMass = total > 0 ? rep / total : 0.0;
    if (rep <= 0) return out;
    out.withinRatio = 0.0;
    for (Eigen::Index m = 0; m < Z.cols(); ++m) {
        std::vector<double> sum(static_cast<std::size_t>(ncell), 0.0);
        double gsum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto c = static_cast<std::size_t>(cell[static_cast<std::size_t>(i)]);
            if (w(i) > 0 && count[c] > 1) {
                sum[c] += w(i) * Z(i, m);
                gsum += w(i) * Z(i, m);
            }
        }
        double gmean = gsum / rep, within = 0.0, tot = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto c = static_cast<std::size_t>(cell[static_cast<std::size_t>(i)]);
            if (w(i) > 0 && count[c] > 1) {
                double mu = sum[c] / mass[c];
                within += w(i) * (Z(i, m) - mu) * (Z(i, m) - mu);
                tot += w(i) * (Z(i, m) - gmean) * (Z(i, m) - gmean);
            }
        }
        double r = tot > 0 ? within / tot : 0.0;
        out.withinRatio = std::max(out.withinRatio, r);
    }
    return out;
}

}  // namespace

ModelFrame build_frame(const Dataset& data, const ModelConfig& config, const FrameOptions& opts) {
    return build_frame(std::make_shared<const Dataset>(data), config, opts);
}

ModelFrame build_frame(std::shared_ptr<const Dataset> data, const ModelConfig& cfgIn, const FrameOptions& opts) {
    ModelConfig cfg = cfgIn;
    if (opts.mode) cfg.mode = *opts.mode;
    if (opts.weights) cfg.weights = *opts.weights;
    if (opts.cluster) cfg.cluster = *opts.cluster;
    if (cfg.mode != "auto") parse_mode(cfg.mode);

    const Dataset& d = *data;
    const std::size_t n = d.n();
    ModelFrame f;
    f.config = cfg;
    f.data = data;
    f.droppedRows = d.dropped();
    f.outcomeName = cfg.outcome;
    f.treatmentName = cfg.treatment;
    f.instrumentNames = cfg.instruments;

    auto numvec = [&](const std::string& c) {
        const auto& v = d.numeric(c);
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    f.y = numvec(cfg.outcome);
    f.x = numvec(cfg.treatment);
    f.zraw.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.instruments.size()));
    for (std::size_t m = 0; m < cfg.instruments.size(); ++m) f.zraw.col(static_cast<Eigen::Index>(m)) = numvec(cfg.instruments[m]);

    DesignMatrix W = expand_terms(d, cfg.covariates, false);
    const auto p = static_cast<std::size_t>(W.values.cols());
    const std::size_t m = cfg.instruments.size();
    if (W.values.cols() == 0 || !(W.values.col(0).array() == 1.0).all())
        throw UserError("covariate design must start with a constant intercept column");
    if (n <= p + m)
        throw UserError("need more rows than covariates plus instruments (n=" + std::to_string(n) + ", p=" +
                        std::to_string(p) + ", m=" + std::to_string(m) + ")");

    if (cfg.weights) {
        f.weights = numvec(*cfg.weights);
        if ((f.weights.array() < 0).any()) throw UserError("row weights must be non-negative");
    } else {
        f.weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    }
    double wsum = f.weights.sum();
    if (!(wsum > 0)) throw UserError("row weights sum to zero");
    auto npos = static_cast<std::size_t>((f.weights.array() > 0).count());
    if (npos < p + m) throw UserError("fewer strictly positive weights than covariates plus instruments");

    if (cfg.cluster) {
        std::vector<std::string> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = d.text(*cfg.cluster, i);
        f.clusters = ClusterIndex::from_labels(labels);
    } else {
        f.clusters = ClusterIndex::singletons(n);
    }

    f.wNames = W.names;
    f.projector = std::make_shared<const WeightedProjector>(std::move(W.values), f.weights, f.wNames);

    // instrument constancy within W cells decides did-rd
    std::vector<int> declared;
    if (!cfg.cell.empty()) declared = make_partition(d, cfg.cell).codes;
    auto pat = within_pattern_variance(f.W(), f.zraw, f.weights, nullptr);
    bool zFunctionOfW = pat.repeatedMass >= 0.5 && pat.withinRatio < 1e-8;
    std::string requested = cfg.mode;
    if (requested == "did-rd" || requested == "did_rd") {
        f.mode = Mode::did_rd;
        if (!declared.empty()) {
            auto dc = within_pattern_variance(f.W(), f.zraw, f.weights, &declared);
            if (dc.withinRatio > 1e-8)
                throw UserError("did-rd mode: instrument varies within declared cells (" + join(cfg.cell, ",") + ")");
            f.cellCheck = "verified";
        } else {
            f.cellCheck = "unverifiable";
        }
        f.modeCheck = zFunctionOfW ? "verified" : (pat.repeatedMass >= 0.5 ? "instrument varies within W cells" : "unverifiable");
        if (pat.repeatedMass >= 0.5 && !zFunctionOfW)
            f.warnings.push_back("did-rd mode requested but the instrument varies within W cells");
    } else {
        f.mode = Mode::standard;
        f.cellCheck = "not applicable";
        f.modeCheck = pat.repeatedMass >= 0.5 ? "verified" : "unverifiable";
        if (zFunctionOfW) {
            f.mode = Mode::did_rd;
            f.modeCheck = "forced";
            f.warnings.push_back("instrument is a function of W (within-cell variance ratio " +
                                 format_number(pat.withinRatio) + "); did-rd mode forced");
        }
    }
    return f;
}

}  // namespace ivgap

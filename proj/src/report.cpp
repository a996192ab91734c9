#include "ivgap/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace ivgap {

using nlohmann::json;

std::string format_csv_number(double v) {
    if (std::isnan(v)) return "NA";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Metadata::Metadata() {
    fields["version"] = kVersion;
    fields["cluster_small_sample_factor"] = "G/(G-1)";
}

Metadata& Metadata::set(const std::string& key, json value) {
    fields[key] = std::move(value);
    return *this;
}

json Metadata::to_json() const {
    json j = json::object();
    for (const auto& [k, v] : fields) j[k] = v;
    return j;
}

std::string Metadata::csv_header() const {
    std::string out;
    for (const auto& [k, v] : fields) {
        out += "# " + k + "=";
        if (v.is_string()) out += v.get<std::string>();
        else if (v.is_number_float()) out += format_csv_number(v.get<double>());
        else out += v.dump();
        out += '\n';
    }
    return out;
}

namespace {

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    std::string s = buf;
    // avoid "-0.000"
    if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
    return s;
}

}  // namespace

std::array<Table1Row, 8> table1_rows(const Table1Input& in) {
    const auto& c = in.coef;
    return {{{"(1) OLS", c[0]},
             {"(2) IV-weighted OLS, covariate weights", c[1]},
             {"(3) IV-weighted OLS, covariate and level weights", c[2]},
             {"(4) IV", c[3]},
             {"(2)-(1) covariate weights", c[1] - c[0]},
             {"(3)-(2) treatment-level weights", c[2] - c[1]},
             {"(4)-(3) marginal effects", c[3] - c[2]},
             {"(4)-(1) total", c[3] - c[0]}}};
}

std::string render_table1(const Table1Input& in) {
    auto rows = table1_rows(in);
    std::size_t width = 0;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    std::ostringstream os;
    auto line = [&](const std::string& label, double v, double se, bool withSe) {
        std::string val = fixed(v, in.decimals);
        os << label << std::string(width - label.size() + 2, ' ');
        os << std::string(val.size() < 8 ? 8 - val.size() : 0, ' ') << val;
        if (withSe) os << "  (" << fixed(se, in.decimals) << ")";
        os << '\n';
    };
    std::string head = "Coefficient";
    os << std::string(width + 2, ' ') << head << '\n';
    for (int i = 0; i < 4; ++i) line(rows[static_cast<std::size_t>(i)].label, rows[static_cast<std::size_t>(i)].value, in.se[static_cast<std::size_t>(i)], true);
    os << "Difference\n";
    for (int i = 4; i < 8; ++i) {
        double se = in.diffSe[static_cast<std::size_t>(i - 4)];
        line(rows[static_cast<std::size_t>(i)].label, rows[static_cast<std::size_t>(i)].value, se, in.showDiffSe && se >= 0);
    }
    return os.str();
}

}  // namespace ivgap

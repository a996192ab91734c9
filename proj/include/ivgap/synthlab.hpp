#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "ivgap/common.hpp"
#include "ivgap/data.hpp"

namespace ivgap {

// finite population over (W cell, U index, Z); X and Y are deterministic given the triple
struct DiscreteDgp {
    std::string name;
    Mode mode = Mode::standard;
    bool separable = true;
    bool instrumentExogenous = true;  // declared; the oracle also measures it
    std::vector<std::string> wNames;
    std::vector<std::string> categorical;           // W coordinates emitted as categorical columns
    std::vector<std::vector<double>> wCells;        // [cell][coordinate]
    std::vector<double> zValues;
    std::vector<double> xLevels;                    // sorted
    std::vector<std::vector<double>> uValues;       // [cell][u]; additive U when separable
    std::vector<std::vector<std::vector<double>>> pmf;     // [cell][u][z]
    std::vector<std::vector<std::vector<double>>> xRule;   // [cell][u][z] -> level value
    std::vector<std::vector<double>> gSep;                 // [cell][x level]
    std::vector<std::vector<std::vector<double>>> gNonsep; // [cell][u][x level]
    std::vector<TermSpec> covariates;
    std::vector<GroupSpec> groups;
    nlohmann::json model = nlohmann::json::object();  // extra model-config fields

    std::size_t cells() const { return wCells.size(); }
    int levelIndex(double x) const;
    double g(std::size_t c, std::size_t u, std::size_t xi) const {
        return separable ? gSep[c][xi] : gNonsep[c][u][xi];
    }
    double y(std::size_t c, std::size_t u, std::size_t z) const;

    void validate() const;
    static DiscreteDgp from_json(const nlohmann::json& j);
    static DiscreteDgp load(const std::string& path);
    nlohmann::json to_json() const;
    // outcome y, treatment x, instrument z, W coordinates, weights/cluster unset
    ModelConfig model_config() const;
};

std::vector<std::string> builtin_dgp_names();
DiscreteDgp builtin_dgp(const std::string& name);
// builtin name or JSON path
DiscreteDgp resolve_dgp(const std::string& nameOrPath);

// one atom of the enumeration with positive mass
struct Atom {
    std::size_t cell = 0, u = 0, z = 0, xi = 0;
    double prob = 0.0;
    double x = 0.0, y = 0.0, zv = 0.0, uv = 0.0;
};

struct MomentTable {
    std::vector<Atom> atoms;
    std::vector<double> cellMass;
    Eigen::MatrixXd wDesign;  // one row per cell
    std::vector<std::string> wColumns;

    // exact pmf-weighted sum of f(atom)
    template <class F>
    long double expect(F&& f) const {
        long double s = 0.0L;
        for (const auto& a : atoms) s += static_cast<long double>(a.prob) * static_cast<long double>(f(a));
        return s;
    }
    template <class F>
    long double expect_in_cell(std::size_t c, F&& f) const {
        long double s = 0.0L;
        for (const auto& a : atoms)
            if (a.cell == c) s += static_cast<long double>(a.prob) * static_cast<long double>(f(a));
        return s / static_cast<long double>(cellMass[c]);
    }
};

MomentTable enumerate_moments(const DiscreteDgp& dgp);

struct LevelOracle {
    double level = 0.0;
    double olsRegression = 0.0, ivRegression = 0.0;  // E[gap 1~ X~]/E[X~^2], IV analogue
    double olsIntegral = 0.0, ivIntegral = 0.0;      // Int omega lambda dF (did-rd: projected form)
};

struct GroupOracle {
    std::string label;
    double share = 0.0;
    double olsRegression = 0.0, ivRegression = 0.0;
    double olsIntegral = 0.0, ivIntegral = 0.0;
};

struct CellOracle {
    std::vector<double> w;
    double mass = 0.0;
    double covXZ = 0.0, varX = 0.0;
    double bIv = 0.0, bOls = 0.0;   // NaN when undefined
    double omegaIv = 0.0, omegaOls = 0.0;
    double omegaStar = 0.0;         // L(X Z~|W=w) / E[X Z~]
    std::vector<double> lambdaIv, lambdaOls;  // per level above the minimum
    std::vector<double> lambdaStarOmega;      // lambda* x omega*, defined even where omega* = 0
    std::vector<double> dg, dgOls;  // per level, Delta g and Delta g_OLS
};

struct OracleWeights {
    std::vector<CellOracle> cells;
    std::vector<LevelOracle> levels;
    std::map<std::string, std::vector<GroupOracle>> groups;
};

struct IdentityCheck {
    std::string id;
    std::string description;
    bool applicable = false;
    std::string reason;  // why not applicable
    double residual = 0.0;
    double tolerance = 1e-12;
    bool passed() const { return !applicable || residual < tolerance; }
};

struct DgpProperties {
    bool separable = false;
    bool meanZeroU = false;        // E(U|W) = 0
    bool exogenous = false;        // E(U|Z,W) = E(U|W)
    bool zIndepU = false;          // P(z|w,u) = P(z|w)
    bool linearZ = false, linearX = false;
    bool zFunctionOfW = false;
    bool gLinearW = false;
    bool covXZNonzero = false;
    bool varXPositive = false;
};

struct OracleReport {
    std::string dgp;
    Mode mode = Mode::standard;
    DgpProperties properties;
    double betaOls = 0.0, betaIv = 0.0, betaOlsC = 0.0, betaOlsCL = 0.0;
    // E[b_OLS(W) X~ Z~]/E[X~ Z~] and E[g_OLS(X,W) Z~]/E[X~ Z~] (raw X in did-rd)
    double betaOlsCRegression = 0.0, betaOlsCLRegression = 0.0;
    std::string betaOlsCLForm = "integral";
    OracleWeights weights;
    std::vector<IdentityCheck> checks;

    bool allPassed() const;
    double maxResidual() const;
    nlohmann::json to_json() const;
};

OracleWeights oracle_weights(const DiscreteDgp& dgp);
OracleReport verify_identities(const DiscreteDgp& dgp, double tol = 1e-12);

// enumeration grid as a dataset with a pmf weight column named "weight"
Dataset population_dataset(const DiscreteDgp& dgp);

// splitmix64 stream seed for replication `rep`
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t rep);
double uniform01(std::mt19937_64& rng);

Dataset sample(const DiscreteDgp& dgp, std::size_t n, std::uint64_t seed, bool withU = false);

enum class RandomRegime { sep_valid_std, sep_invalid_std, nonsep_valid_std, sep_did_rd, nonsat_std };
std::vector<RandomRegime> all_random_regimes();
std::string to_string(RandomRegime r);
DiscreteDgp random_dgp(RandomRegime regime, std::uint64_t seed);

struct McTargetSummary {
    std::string target;
    double oracle = 0.0;
    double mean = 0.0, sd = 0.0, mcSe = 0.0, rmse = 0.0;
    double coverage = 0.0;      // share of 95% intervals covering the oracle value
    double meanSe = 0.0;
    int valid = 0;
};

struct McSummary {
    std::string dgp;
    std::size_t n = 0;
    int reps = 0;
    std::uint64_t seed = 0;
    int threads = 1;
    int failures = 0;
    std::vector<std::string> failureMessages;  // first few
    std::vector<McTargetSummary> targets;
    double dwhRejection = 0.0;  // share of valid reps rejecting at 5%
    int dwhValid = 0;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

struct McOptions {
    std::size_t n = 1000;
    int reps = 100;
    std::uint64_t seed = 1;
    int threads = 1;
    bool dwh = true;
    std::optional<std::string> seRegime;
};

McSummary mc_study(const DiscreteDgp& dgp, const McOptions& opts);

}  // namespace ivgap

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ivgap {

constexpr double tau_rank = 1e-8;
constexpr double tau_ortho = 1e-8;
constexpr double tau_denom = 1e-12;

enum class Mode { standard, did_rd };

std::string to_string(Mode m);
Mode parse_mode(std::string_view s);

// user errors map to exit code 1, numerical errors to exit code 2
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UserError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class RankError : public NumericalError {
public:
    RankError(const std::string& what, std::vector<std::string> cols)
        : NumericalError(what), columns(std::move(cols)) {}
    std::vector<std::string> columns;
};

class RelevanceError : public NumericalError {
public:
    RelevanceError(const std::string& what, double f) : NumericalError(what), firstStageF(f) {}
    double firstStageF;
};

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// shortest round-trip decimal text for a double
std::string format_number(double v);

}  // namespace ivgap

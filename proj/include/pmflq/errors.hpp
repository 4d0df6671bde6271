#pragma once

#include <stdexcept>
#include <string>

namespace pmflq {

/// Coarse classification used to map failures onto process exit codes.
enum class ErrorKind { validation, numerical, no_convergence };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& what)
        : std::runtime_error(code + ": " + what), kind_(kind), code_(std::move(code)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

namespace detail {
template <ErrorKind Kind>
struct ErrorBase : Error {
    ErrorBase(std::string code, const std::string& what) : Error(Kind, std::move(code), what) {}
};
} // namespace detail

// Input and usage errors (exit code 2).
struct ValidationError : detail::ErrorBase<ErrorKind::validation> {
    explicit ValidationError(const std::string& what) : ErrorBase("ValidationError", what) {}
protected:
    ValidationError(std::string code, const std::string& what) : ErrorBase(std::move(code), what) {}
};
struct ParseError : ValidationError {
    explicit ParseError(const std::string& what) : ValidationError("ParseError", what) {}
};
struct MissingPolicy : ValidationError {
    explicit MissingPolicy(const std::string& what) : ValidationError("MissingPolicy", what) {}
};
struct SingularR : ValidationError {
    explicit SingularR(const std::string& what) : ValidationError("SingularR", what) {}
};
struct NotAdmissible : ValidationError {
    explicit NotAdmissible(const std::string& what) : ValidationError("NotAdmissible", what) {}
};
struct SizeMismatch : ValidationError {
    explicit SizeMismatch(const std::string& what) : ValidationError("SizeMismatch", what) {}
};
struct TooLarge : ValidationError {
    explicit TooLarge(const std::string& what) : ValidationError("TooLarge", what) {}
};
struct NotAGridNode : ValidationError {
    explicit NotAGridNode(const std::string& what) : ValidationError("NotAGridNode", what) {}
};
struct InsufficientData : ValidationError {
    explicit InsufficientData(const std::string& what) : ValidationError("InsufficientData", what) {}
};

// Numerical failures (exit code 3).
struct NumericalError : detail::ErrorBase<ErrorKind::numerical> {
    using ErrorBase::ErrorBase;
};
struct SingularMatrix : NumericalError {
    explicit SingularMatrix(const std::string& what) : NumericalError("SingularMatrix", what) {}
};
struct NotPositiveDefinite : NumericalError {
    explicit NotPositiveDefinite(const std::string& what) : NumericalError("NotPositiveDefinite", what) {}
};
struct NonFiniteState : NumericalError {
    explicit NonFiniteState(const std::string& what) : NumericalError("NonFiniteState", what) {}
};
struct SingularAnchor : NumericalError {
    explicit SingularAnchor(const std::string& what) : NumericalError("SingularAnchor", what) {}
};
struct PeriodicityViolation : NumericalError {
    explicit PeriodicityViolation(const std::string& what) : NumericalError("PeriodicityViolation", what) {}
};
struct ResidualTooLarge : NumericalError {
    explicit ResidualTooLarge(const std::string& what) : NumericalError("ResidualTooLarge", what) {}
};

// Iteration caps (exit code 4).
struct NoConvergence : detail::ErrorBase<ErrorKind::no_convergence> {
    explicit NoConvergence(const std::string& what) : ErrorBase("NoConvergence", what) {}
};

} // namespace pmflq

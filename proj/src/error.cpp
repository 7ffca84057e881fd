#include "nsfwguard/error.hpp"

namespace nsfwguard {

ValidationError::ValidationError(std::string subject, const std::string& what)
    : Error(subject + ": " + what), subject_(std::move(subject)) {}

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

BackendError::BackendError(std::string backend, const std::string& what)
    : Error("backend '" + backend + "': " + what), backend_(std::move(backend)) {}

CompositionError::CompositionError(std::string source)
    : Error("not enough samples for source " + source), source_(std::move(source)) {}

}  // namespace nsfwguard

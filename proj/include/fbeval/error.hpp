#pragma once

#include <stdexcept>
#include <string>

namespace fbeval {

enum class ErrorKind {
    invalid_argument,
    config,
    ingest,
    pipeline,
    judge_transport,
    judge_format,
};

const char* to_string(ErrorKind kind);

// Base of every error thrown by the library. The C API maps the kind onto a
// status code, so callers never need to inspect message text.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what) : Error(ErrorKind::invalid_argument, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class IngestError : public Error {
public:
    explicit IngestError(const std::string& what) : Error(ErrorKind::ingest, what) {}
};

class PipelineError : public Error {
public:
    explicit PipelineError(const std::string& what) : Error(ErrorKind::pipeline, what) {}
};

class JudgeTransportError : public Error {
public:
    explicit JudgeTransportError(const std::string& what) : Error(ErrorKind::judge_transport, what) {}
};

// Model output that could not be coerced into the template's response schema.
// Carries the offending raw text for the audit log.
class JudgeFormatError : public Error {
public:
    JudgeFormatError(const std::string& what, std::string raw_text)
        : Error(ErrorKind::judge_format, what), raw_text_(std::move(raw_text)) {}
    const std::string& raw_text() const noexcept { return raw_text_; }

private:
    std::string raw_text_;
};

// Rethrows the in-flight exception with `context` prefixed to its message,
// keeping its kind. Non-fbeval exceptions become PipelineError.
[[noreturn]] void rethrow_with_context(const std::string& context);

}  // namespace fbeval

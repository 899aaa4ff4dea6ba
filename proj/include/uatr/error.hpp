#pragma once

#include <stdexcept>
#include <string>

namespace uatr {

enum class ErrorKind {
    format,
    unsupported,
    empty_input,
    parameter,
    size,
    shape,
    label,
    numeric,
    perturbation,
    config,
    io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// One subclass per kind so call sites and tests can catch precisely.
#define UATR_DEFINE_ERROR(Name, Kind)                                          \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

UATR_DEFINE_ERROR(FormatError, format)
UATR_DEFINE_ERROR(UnsupportedError, unsupported)
UATR_DEFINE_ERROR(EmptyInputError, empty_input)
UATR_DEFINE_ERROR(ParameterError, parameter)
UATR_DEFINE_ERROR(SizeError, size)
UATR_DEFINE_ERROR(ShapeError, shape)
UATR_DEFINE_ERROR(LabelError, label)
UATR_DEFINE_ERROR(NumericError, numeric)
UATR_DEFINE_ERROR(PerturbationError, perturbation)
UATR_DEFINE_ERROR(ConfigError, config)
UATR_DEFINE_ERROR(IoError, io)

#undef UATR_DEFINE_ERROR

}  // namespace uatr

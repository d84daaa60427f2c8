#pragma once

#include <stdexcept>
#include <string>

namespace ctok {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define CTOK_DEFINE_ERROR(Name)              \
    class Name : public Error {              \
    public:                                  \
        using Error::Error;                  \
    };

CTOK_DEFINE_ERROR(InvalidInput)
CTOK_DEFINE_ERROR(InvalidEmbedding)
CTOK_DEFINE_ERROR(GenerationError)
CTOK_DEFINE_ERROR(DegeneratePotential)
CTOK_DEFINE_ERROR(StaleScale)
CTOK_DEFINE_ERROR(UnsupportedClass)
CTOK_DEFINE_ERROR(NonFiniteGradient)
CTOK_DEFINE_ERROR(IncompatibleToken)
CTOK_DEFINE_ERROR(UnsupportedFormat)
CTOK_DEFINE_ERROR(ChecksumError)
CTOK_DEFINE_ERROR(ConfigError)

#undef CTOK_DEFINE_ERROR

}  // namespace ctok

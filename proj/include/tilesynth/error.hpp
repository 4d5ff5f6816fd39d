#pragma once

#include <stdexcept>
#include <string>

namespace tilesynth {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define TILESYNTH_DEFINE_ERROR(Name)          \
    class Name : public Error {               \
    public:                                   \
        using Error::Error;                   \
    };

TILESYNTH_DEFINE_ERROR(IOError)
TILESYNTH_DEFINE_ERROR(FormatError)
TILESYNTH_DEFINE_ERROR(InvalidDimension)
TILESYNTH_DEFINE_ERROR(OutOfBounds)
TILESYNTH_DEFINE_ERROR(ShapeError)
TILESYNTH_DEFINE_ERROR(ChannelMismatch)
TILESYNTH_DEFINE_ERROR(ChecksumError)
TILESYNTH_DEFINE_ERROR(InvalidTileSize)
TILESYNTH_DEFINE_ERROR(InvalidRatio)
TILESYNTH_DEFINE_ERROR(EmptyInput)
TILESYNTH_DEFINE_ERROR(TooSmall)
TILESYNTH_DEFINE_ERROR(DetectorError)
TILESYNTH_DEFINE_ERROR(DivergenceError)
TILESYNTH_DEFINE_ERROR(ScaleCompositionError)
TILESYNTH_DEFINE_ERROR(UsageError)

#undef TILESYNTH_DEFINE_ERROR

}  // namespace tilesynth

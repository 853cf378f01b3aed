#pragma once

#include <stdexcept>
#include <string>

namespace canopy {

/// Broad failure classes. The CLI maps these onto its exit codes.
enum class ErrorKind {
    config,
    io,
    predictor,
    internal,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

#define CANOPY_DEFINE_ERROR(Name, Kind)                                                            \
    class Name : public Error {                                                                    \
      public:                                                                                      \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}                   \
    }

CANOPY_DEFINE_ERROR(ConfigError, config);
CANOPY_DEFINE_ERROR(IoError, io);
CANOPY_DEFINE_ERROR(ParseError, io);
CANOPY_DEFINE_ERROR(PredictorError, predictor);
CANOPY_DEFINE_ERROR(ProtocolError, predictor);
CANOPY_DEFINE_ERROR(BoundsError, internal);
CANOPY_DEFINE_ERROR(DegenerateTransformError, internal);
CANOPY_DEFINE_ERROR(EmptyGeometryError, internal);
CANOPY_DEFINE_ERROR(FrameError, internal);
CANOPY_DEFINE_ERROR(CodecError, internal);
CANOPY_DEFINE_ERROR(PlumbingError, internal);

#undef CANOPY_DEFINE_ERROR

} // namespace canopy

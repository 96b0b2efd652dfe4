#pragma once

#include <stdexcept>
#include <string>

namespace gazediff {

// Failure classes shared by the library, the C API status codes and the CLI
// exit codes: 1 usage, 2 data/format, 3 numerical.
enum class ErrorKind { Usage = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string & msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define GAZEDIFF_ERROR_TYPE(Name, Kind)                                       \
    class Name : public Error {                                               \
    public:                                                                   \
        explicit Name(const std::string & msg) : Error(ErrorKind::Kind, msg) {} \
    }

GAZEDIFF_ERROR_TYPE(UsageError, Usage);

GAZEDIFF_ERROR_TYPE(ShapeError, Data);
GAZEDIFF_ERROR_TYPE(ScheduleError, Data);
GAZEDIFF_ERROR_TYPE(FormatError, Data);
GAZEDIFF_ERROR_TYPE(IntegrityError, Data);
GAZEDIFF_ERROR_TYPE(CorpusError, Data);
GAZEDIFF_ERROR_TYPE(ConfigError, Data);
GAZEDIFF_ERROR_TYPE(EmptyScanpath, Data);
GAZEDIFF_ERROR_TYPE(EmptyBatch, Data);
GAZEDIFF_ERROR_TYPE(InvalidStimulus, Data);
GAZEDIFF_ERROR_TYPE(MissingFeature, Data);
GAZEDIFF_ERROR_TYPE(MissingSegmentation, Data);
GAZEDIFF_ERROR_TYPE(InsufficientScanpaths, Data);

GAZEDIFF_ERROR_TYPE(NumericalError, Numeric);

#undef GAZEDIFF_ERROR_TYPE

} // namespace gazediff

#pragma once

#include <stdexcept>

namespace ecofuse {

// Root of the library's error hierarchy. ValidationError covers bad inputs
// (files, schemas, configs) and maps to CLI exit code 2; RuntimeFailure maps
// to exit code 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class RuntimeFailure : public Error {
public:
    using Error::Error;
};

// ---- dataset loading / alignment ----
class MalformedFile : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class ProbabilityOutOfRange : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class RowSumViolation : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class UnknownClassName : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class DuplicateSampleId : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class SampleSetMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class ClassSetMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class ShapeMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class ClassTooSmall : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// ---- metrics ----
class EmptyMatrix : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// ---- fusion ----
class WeightLengthMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class TooFewModels : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// ---- stacking ----
class DimensionMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class DegenerateLabels : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// ---- energy ----
class CountersUnavailable : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};
class TraceExhausted : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class InsufficientSamples : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class ZeroDuration : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class EmptyGroup : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// ---- pipeline / reporting ----
class ManifestMissing : public ValidationError {
public:
    using ValidationError::ValidationError;
};
class UnsupportedFormat : public ValidationError {
public:
    using ValidationError::ValidationError;
};

}  // namespace ecofuse

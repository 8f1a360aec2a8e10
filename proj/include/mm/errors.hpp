#pragma once

#include <stdexcept>
#include <string>

namespace mm {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/latent dimensions do not satisfy an operation's contract.
struct ShapeError : Error { using Error::Error; };

// Diffusion timestep outside the schedule range.
struct StepError : Error { using Error::Error; };

// Checkpoint missing, incomplete, or unreadable.
struct WeightsError : Error { using Error::Error; };

// Non-finite value reached a place that requires finite numbers.
struct NumericsError : Error { using Error::Error; };

// Binary mask with no foreground pixels where foreground is required.
struct EmptyMask : Error { using Error::Error; };

// More object colors requested than the palette can provide.
struct PaletteExhausted : Error { using Error::Error; };

// Annotation does not fit the trajectory canvas.
struct OutOfBounds : Error { using Error::Error; };

// Sparsification count outside the supported range.
struct InvalidSparsity : Error { using Error::Error; };

// A score (flow, area ratio) is undefined for the given inputs.
struct UndefinedScore : Error { using Error::Error; };

// Caller-supplied data violates a precondition.
struct InputError : Error { using Error::Error; };

// An external model client failed or returned garbage.
struct ClientError : Error { using Error::Error; };

}  // namespace mm

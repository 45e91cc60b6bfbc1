#pragma once

// The core library is compiled twice: once with 32-bit scalars for training
// and the C API, once with STORM_DOUBLE for finite-difference and oracle
// checks. Each build lives in its own inline namespace so both can be linked
// into the same binary.

#if defined(STORM_DOUBLE)
#define STORM_PREC_NS f64
#else
#define STORM_PREC_NS f32
#endif

namespace storm::inline STORM_PREC_NS {

#if defined(STORM_DOUBLE)
using Scalar = double;
#else
using Scalar = float;
#endif

inline constexpr bool kDoublePrecision = sizeof(Scalar) == 8;

}  // namespace storm::inline STORM_PREC_NS

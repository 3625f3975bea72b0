#pragma once

// Scalar type selection. The library is compiled twice from the same sources:
// once with single-precision storage (training, CLI) and once with
// MSPFN_DOUBLE defined (gradient and oracle checks). Each build lives in its
// own inline namespace so both can be linked into one executable.

#if defined(MSPFN_DOUBLE)
#define MSPFN_ABI f64
#else
#define MSPFN_ABI f32
#endif

namespace mspfn {
inline namespace MSPFN_ABI {

#if defined(MSPFN_DOUBLE)
using real = double;
#else
using real = float;
#endif

// Wider accumulator used by reductions regardless of storage precision.
using accum = double;

}  // namespace MSPFN_ABI
}  // namespace mspfn

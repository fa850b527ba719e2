#pragma once

namespace c3d {

/// Caps the number of OpenMP workers used by the kernels. Results are
/// bit-identical for any thread count; 1 disables parallel regions entirely.
void set_threads(int n);
int max_threads() noexcept;

}  // namespace c3d

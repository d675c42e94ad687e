#include "stkd/model.hpp"

namespace stkd {

// Counted: temporal convolutions (including residual 1x1 projections), the Chebyshev
// propagation T_k(L) X against the full (N x K_s*N) polynomial kernel, the theta
// channel mixing, and the output projections. Element-wise work is not counted.
std::uint64_t count_macs(const ModelConfig& config) {
  config.validate();
  using u64 = std::uint64_t;
  const u64 n = static_cast<u64>(config.nodes);
  const u64 kt = static_cast<u64>(config.temporal_kernel);
  const u64 ks = static_cast<u64>(config.spatial_order);

  auto temporal = [&](u64 t_out, u64 k, u64 ci, u64 co, bool glu, bool residual) {
    const u64 oc = glu ? 2 * co : co;
    u64 macs = t_out * n * k * ci * oc;
    if (residual && ci > co) macs += t_out * n * ci * co;
    return macs;
  };

  u64 total = 0;
  u64 t = static_cast<u64>(config.history);
  for (const auto& b : config.blocks) {
    const u64 ci = b.c_in, cm = b.c_mid, co = b.c_out;
    t -= kt - 1;
    total += temporal(t, kt, ci, cm, true, true);
    total += t * cm * ks * n * n;  // graph polynomial propagation
    total += t * n * ks * cm * cm;  // theta
    t -= kt - 1;
    total += temporal(t, kt, cm, co, false, true);
  }
  const u64 c = static_cast<u64>(config.blocks[1].c_out);
  total += temporal(1, t, c, c, true, true);
  total += temporal(1, 1, c, c, false, false);
  total += n * c;
  return total;
}

std::uint64_t count_flops(const ModelConfig& config, std::uint64_t batch) {
  return 2 * count_macs(config) * batch;
}

}  // namespace stkd

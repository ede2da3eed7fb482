#pragma once
// Frozen outputs of tests/oracles/metric_refs.py.

namespace cunsb::testref {

struct MetricPairRef {
  double psnr;
  double ssim;
};

// Pairs from metric_pair(k), k = 0..9, [0, 1] domain, data range 1.
inline constexpr MetricPairRef kMetricPairs[10] = {
    {23.450254898460663, 0.8102996944000717}, {23.555295240192283, 0.8342037576581225},
    {23.47688213832289, 0.8347391836793405},  {23.42153135434686, 0.8221521065415648},
    {23.381793288377523, 0.838689940451481},  {23.30060194101309, 0.8238314947877999},
    {23.316456953003943, 0.8391054659392149}, {23.496452458353826, 0.8389774100917008},
    {23.586775335986346, 0.8174987044892393}, {23.541644162066998, 0.82081703052887},
};

// 32x32 single-pixel checkerboard a against 1 - a, window 11, data range 1.
inline constexpr double kCheckerboardSsim = -0.996406468356957;

// u8_pair(77, 2, 2, 48, 48, noise 40) in [-1, 1]: window 11, 3 scales, range 2.
inline constexpr double kMsSsim3 = 0.9424281441265647;
// u8_pair(78, 1, 3, 28, 28, noise 60): window 7, 2 scales.
inline constexpr double kMsSsim2Window7 = 0.8306556663526831;
// u8_pair(79, 1, 1, 24, 30, noise 50): window 11, single scale.
inline constexpr double kSsim1Window11 = 0.6211315405269644;

}  // namespace cunsb::testref

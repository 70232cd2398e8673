#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library: networks are described by plain stage tables and
// convolutions are explicit loops over flat arrays.

#include <cstdint>
#include <vector>

namespace oracle {

struct StageRow {
  int depth;
  long long out_width;
  long long ratio;
  long long groups;
  long long se_reduction;  // 0 = no SE
  int stride;
};

struct NetTable {
  long long in_h, in_w;
  long long stem_width;
  int stem_kernel, stem_stride;
  bool stem_pool;
  long long classes;
  std::vector<StageRow> stages;
};

inline long long ceil_div(long long a, long long b) { return (a + b - 1) / b; }

// One row per layer, summed. "Same" padding on odd kernels means an output
// extent of ceil(extent / stride).
inline long long spreadsheet_macs(const NetTable& t, bool with_classifier = true) {
  long long h = ceil_div(t.in_h, t.stem_stride);
  long long w = ceil_div(t.in_w, t.stem_stride);
  long long total = h * w * t.stem_width * 3LL * t.stem_kernel * t.stem_kernel;
  if (t.stem_pool) {
    h = ceil_div(h, 2);
    w = ceil_div(w, 2);
  }
  long long c = t.stem_width;
  for (const auto& st : t.stages) {
    for (int i = 0; i < st.depth; ++i) {
      const int s = i == 0 ? st.stride : 1;
      const long long inner = st.out_width / st.ratio;
      const long long ho = ceil_div(h, s), wo = ceil_div(w, s);
      total += h * w * c * inner;                               // 1x1 reduce
      total += ho * wo * inner * (inner / st.groups) * 9;       // 3x3
      total += ho * wo * inner * st.out_width;                  // 1x1 expand
      if (s != 1 || c != st.out_width) total += ho * wo * c * st.out_width;
      if (st.se_reduction > 0) {
        const long long hidden = c / st.se_reduction > 0 ? c / st.se_reduction : 1;
        total += 2 * inner * hidden;
      }
      c = st.out_width;
      h = ho;
      w = wo;
    }
  }
  if (with_classifier) total += c * t.classes;
  return total;
}

inline NetTable resnet(std::vector<int> depths, long long h = 224, long long w = 224) {
  NetTable t{h, w, 64, 7, 2, true, 1000, {}};
  const long long widths[4] = {256, 512, 1024, 2048};
  for (int i = 0; i < 4; ++i) t.stages.push_back({depths[i], widths[i], 4, 1, 0, i == 0 ? 1 : 2});
  return t;
}

inline NetTable regnety_800mf() {
  return {224, 224, 32, 3, 2, false, 1000,
          {{1, 64, 1, 4, 4, 2}, {3, 128, 1, 8, 4, 2}, {8, 320, 1, 20, 4, 2}, {2, 768, 1, 48, 4, 2}}};
}

inline NetTable regnety_400mf() {
  return {224, 224, 32, 3, 2, false, 1000,
          {{1, 48, 1, 6, 4, 2}, {3, 104, 1, 13, 4, 2}, {6, 208, 1, 26, 4, 2}, {6, 440, 1, 55, 4, 2}}};
}

// x: (n, c, h, w); wt: (o, c/g, k, k); zero padding k/2.
inline std::vector<double> conv_loops(const std::vector<double>& x, int n, int c, int h, int w,
                                      const std::vector<double>& wt, int o, int k, int stride, int g) {
  const int pad = k / 2;
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  const int cg = c / g, og = o / g;
  std::vector<double> y(static_cast<std::size_t>(n) * o * ho * wo, 0.0);
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < o; ++oc)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double acc = 0;
          const int grp = oc / og;
          for (int ic = 0; ic < cg; ++ic)
            for (int a = 0; a < k; ++a)
              for (int bb = 0; bb < k; ++bb) {
                const int yi = i * stride + a - pad, xj = j * stride + bb - pad;
                if (yi < 0 || yi >= h || xj < 0 || xj >= w) continue;
                acc += wt[((oc * cg + ic) * k + a) * k + bb] * x[((b * c + grp * cg + ic) * h + yi) * w + xj];
              }
          y[((b * o + oc) * ho + i) * wo + j] = acc;
        }
  return y;
}

}  // namespace oracle

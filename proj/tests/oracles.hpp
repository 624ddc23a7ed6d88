/* Copyright 2026 The voxelseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Reference implementations used only by the tests. They are deliberately
// written as plain loops with no shared code from the library.

#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace oracle {

// y[co,z,y,x] = b[co] + sum w[co,ci,kz,ky,kx] * x[ci, z*s - p + kz, ...]
// x: [ci, d, h, w], w: [co, ci, k, k, k] (cubic kernel), zero padding.
inline std::vector<double> naive_conv3d(const std::vector<double>& x, std::size_t ci, std::array<std::size_t, 3> in,
                                        const std::vector<double>& w, std::size_t co, std::array<std::size_t, 3> k,
                                        const std::vector<double>& b, std::array<std::size_t, 3> stride,
                                        std::array<std::size_t, 3> pad, std::array<std::size_t, 3>& out) {
  for (int a = 0; a < 3; ++a) out[a] = (in[a] + 2 * pad[a] - k[a]) / stride[a] + 1;
  std::vector<double> y(co * out[0] * out[1] * out[2], 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t z = 0; z < out[0]; ++z)
      for (std::size_t r = 0; r < out[1]; ++r)
        for (std::size_t c = 0; c < out[2]; ++c) {
          double acc = b.empty() ? 0.0 : b[o];
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t kz = 0; kz < k[0]; ++kz)
              for (std::size_t ky = 0; ky < k[1]; ++ky)
                for (std::size_t kx = 0; kx < k[2]; ++kx) {
                  const long iz = long(z * stride[0] + kz) - long(pad[0]);
                  const long iy = long(r * stride[1] + ky) - long(pad[1]);
                  const long ix = long(c * stride[2] + kx) - long(pad[2]);
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= long(in[0]) || iy >= long(in[1]) || ix >= long(in[2]))
                    continue;
                  acc += w[(((o * ci + i) * k[0] + kz) * k[1] + ky) * k[2] + kx] *
                         x[((i * in[0] + iz) * in[1] + iy) * in[2] + ix];
                }
          y[((o * out[0] + z) * out[1] + r) * out[2] + c] = acc;
        }
  return y;
}

// Closed-form parameter count of the encoder-decoder with plain two-conv
// blocks, optional attention gates on every block and optional pyramid pooling
// with three bins at the bottleneck.
inline std::size_t param_count(const std::vector<std::size_t>& f, std::size_t in, bool gates, bool pyramid) {
  auto block = [&](std::size_t cin, std::size_t c) {
    std::size_t n = c * cin * 27 + c + c * c * 27 + c;
    if (gates) n += (c / 2) * c + c / 2 + c * (c / 2) + c + c + 1;
    return n;
  };
  const std::size_t depth = f.size() - 1;
  std::size_t n = 0, cin = in;
  for (std::size_t l = 0; l < depth; ++l) {
    n += block(cin, f[l]);
    cin = f[l];
  }
  n += block(cin, f[depth]);
  if (pyramid) {
    const std::size_t c = f[depth], cb = c / 3 > 0 ? c / 3 : 1;
    n += 3 * (cb * c + cb) + c * (c + 3 * cb) + c;
  }
  for (std::size_t l = 0; l < depth; ++l) n += f[l + 1] * f[l] * 8 + f[l] + block(2 * f[l], f[l]);
  return n + f[0] + 1;
}

// Number of 6-connected foreground components of a binary [d,h,w] grid.
inline std::size_t components6(const std::vector<double>& m, std::size_t d, std::size_t h, std::size_t w) {
  std::vector<char> seen(m.size(), 0);
  std::size_t count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < m.size(); ++s) {
    if (m[s] != 1.0 || seen[s]) continue;
    ++count;
    seen[s] = 1;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t z = i / (h * w), y = i / w % h, x = i % w;
      const long nb[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
      for (const auto& o : nb) {
        const long nz = long(z) + o[0], ny = long(y) + o[1], nx = long(x) + o[2];
        if (nz < 0 || ny < 0 || nx < 0 || nz >= long(d) || ny >= long(h) || nx >= long(w)) continue;
        const std::size_t j = (std::size_t(nz) * h + std::size_t(ny)) * w + std::size_t(nx);
        if (m[j] == 1.0 && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return count;
}

}  // namespace oracle

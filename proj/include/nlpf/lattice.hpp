#pragma once
// Binary periodic grids on [0,L)^d and their energy.
//
// Nonlocal term: for a voxel set, g(zeta) = int |chi(x+zeta) - chi(x)| dx is
// 2 h^d (A0 - A(m)) at lattice offsets zeta = h m, with A the integer
// autocorrelation.  The lattice sum against the periodized kernel is grouped by
// orbits of the cube symmetry group, with integer partial sums, so the result
// is bit-identical under translations, quarter turns, reflections and
// complement.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <fftw3.h>

#include "nlpf/kernel.hpp"
#include "nlpf/report.hpp"
#include "nlpf/shape.hpp"

namespace nlpf {

struct VoxelSet {
  int d = 2;
  int N = 8;
  double L = 1;
  std::vector<std::uint8_t> bits;  // row-major, axis 0 slowest

  static VoxelSet make(int d, int N, double L) {
    if (d < 1 || d > 3) throw ConfigError("voxel sets support d in {1,2,3}");
    if (N < 8) throw ConfigError("grid size must be >= 8");
    if (!(L > 0) || !std::isfinite(L)) throw ConfigError("cell length must be positive");
    VoxelSet v;
    v.d = d;
    v.N = N;
    v.L = L;
    v.bits.assign(v.size(), 0);
    return v;
  }

  std::size_t size() const {
    std::size_t s = 1;
    for (int i = 0; i < d; ++i) s *= static_cast<std::size_t>(N);
    return s;
  }
  double spacing() const { return L / N; }
  std::size_t popcount() const { return std::count(bits.begin(), bits.end(), 1); }
  double fraction() const { return static_cast<double>(popcount()) / static_cast<double>(size()); }

  std::size_t index(int i, int j = 0, int k = 0) const {
    auto w = [&](int a) { return static_cast<std::size_t>(((a % N) + N) % N); };
    if (d == 1) return w(i);
    if (d == 2) return w(i) * N + w(j);
    return (w(i) * N + w(j)) * N + w(k);
  }

  std::array<int, 3> coords(std::size_t idx) const {
    std::array<int, 3> c{0, 0, 0};
    for (int a = d - 1; a >= 0; --a) {
      c[a] = static_cast<int>(idx % N);
      idx /= N;
    }
    return c;
  }

  VoxelSet complement() const {
    VoxelSet c = *this;
    for (auto& b : c.bits) b ^= 1;
    return c;
  }

  bool operator==(const VoxelSet& o) const { return d == o.d && N == o.N && L == o.L && bits == o.bits; }
};

inline VoxelSet rasterize(const AnalyticShape& shape, int N, double L) {
  VoxelSet v = VoxelSet::make(shape.d, N, L);
  const double h = v.spacing();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto c = v.coords(i);
    Vec x{0, 0, 0};
    for (int a = 0; a < v.d; ++a) x[a] = (c[a] + 0.5) * h;
    v.bits[i] = contains(shape, x) ? 1 : 0;
  }
  return v;
}

// ---- grid symmetry helpers

inline VoxelSet quarter_turn(const VoxelSet& v, int a = 0, int b = 1) {
  VoxelSet out = v;
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto c = v.coords(i);
    const int t = c[a];
    c[a] = v.N - 1 - c[b];
    c[b] = t;
    out.bits[v.index(c[0], c[1], c[2])] = v.bits[i];
  }
  return out;
}

inline VoxelSet reflect(const VoxelSet& v, int axis = 0) {
  VoxelSet out = v;
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto c = v.coords(i);
    c[axis] = v.N - 1 - c[axis];
    out.bits[v.index(c[0], c[1], c[2])] = v.bits[i];
  }
  return out;
}

inline VoxelSet shift(const VoxelSet& v, std::array<int, 3> s) {
  VoxelSet out = v;
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto c = v.coords(i);
    out.bits[v.index(c[0] + s[0], c[1] + s[1], c[2] + s[2])] = v.bits[i];
  }
  return out;
}

namespace detail {

inline std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

// Integer autocorrelation A(m) = sum_x chi(x) chi(x+m) on the torus.
inline std::vector<std::int64_t> autocorrelation(const VoxelSet& v) {
  const std::size_t n = v.size();
  const int last = v.N / 2 + 1;
  const std::size_t nc = n / v.N * last;
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(nc);
  int dims[3] = {v.N, v.N, v.N};
  fftw_plan fwd, bwd;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fwd = fftw_plan_dft_r2c(v.d, dims, in, out, FFTW_ESTIMATE);
    bwd = fftw_plan_dft_c2r(v.d, dims, out, in, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < n; ++i) in[i] = v.bits[i];
  fftw_execute(fwd);
  for (std::size_t i = 0; i < nc; ++i) {
    out[i][0] = out[i][0] * out[i][0] + out[i][1] * out[i][1];
    out[i][1] = 0;
  }
  fftw_execute(bwd);
  std::vector<std::int64_t> A(n);
  for (std::size_t i = 0; i < n; ++i) A[i] = std::llround(in[i] / static_cast<double>(n));
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }
  fftw_free(in);
  fftw_free(out);
  return A;
}

// Cell-averaged periodized kernel on the grid, stored once per orbit of the
// symmetry group of the cube lattice.
struct LatticeKernel {
  int d, N;
  double L;
  std::vector<std::int32_t> orbit;  // orbit id of each offset m
  std::vector<double> w_orbit;
  std::vector<double> dense;        // w(m), w(0) = 0
  double total = 0;                 // sum_m w(m)
};

inline std::array<int, 3> canonical_offset(const std::array<int, 3>& m, int d, int N) {
  std::array<int, 3> f{0, 0, 0};
  for (int a = 0; a < d; ++a) f[a] = std::min(m[a], N - m[a]);
  std::sort(f.begin(), f.begin() + d, std::greater<int>());
  return f;
}

// Average of K over the axis box centred at z with side h.  Boxes cut by the
// cutoff sphere are subdivided so the kink is resolved.
inline double box_average(const KernelSpec& k, int d, const std::array<double, 3>& z, double h, int depth = 0) {
  double lo2 = 0, hi2 = 0;
  for (int a = 0; a < d; ++a) {
    const double l = std::abs(z[a]) - 0.5 * h, u = std::abs(z[a]) + 0.5 * h;
    lo2 += l > 0 ? l * l : 0;
    hi2 += u * u;
  }
  const double c = k.cutoff;
  if (hi2 <= c * c) return std::pow(c, -k.p);
  if (lo2 < c * c && depth < 7) {
    double acc = 0;
    for (int s = 0; s < (1 << d); ++s) {
      auto zc = z;
      for (int a = 0; a < d; ++a) zc[a] += ((s >> a) & 1 ? 0.25 : -0.25) * h;
      acc += box_average(k, d, zc, 0.5 * h, depth + 1);
    }
    return acc / (1 << d);
  }
  // 3-point Gauss-Legendre per axis
  static constexpr double x3[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
  static constexpr double w3[3] = {5.0 / 18, 8.0 / 18, 5.0 / 18};
  const int n1 = d >= 2 ? 3 : 1, n2 = d >= 3 ? 3 : 1;
  double acc = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < n1; ++j)
      for (int l = 0; l < n2; ++l) {
        const double x = z[0] + 0.5 * h * x3[i];
        const double y = d >= 2 ? z[1] + 0.5 * h * x3[j] : 0;
        const double t = d >= 3 ? z[2] + 0.5 * h * x3[l] : 0;
        const double wt = w3[i] * (d >= 2 ? w3[j] : 1) * (d >= 3 ? w3[l] : 1);
        acc += wt * kernel_radial(k, std::sqrt(x * x + y * y + t * t)).value();
      }
  return acc;
}

// Periodized cell-averaged kernel at offset z.  Images farther than half a
// cell are smooth on the voxel scale and point-sampled; beyond Rc the image sum
// is replaced by its continuum average.
inline double periodized(const KernelSpec& k, int d, double L, double h, const std::array<double, 3>& z) {
  const double Rc = 8 * std::max(L, k.cutoff);
  const double near = std::max(0.5 * L, 2 * k.cutoff + 2 * h);
  const int K = static_cast<int>(std::ceil(Rc / L)) + 1;
  double acc = 0;
  const int k1 = d >= 2 ? K : 0, k2 = d >= 3 ? K : 0;
  for (int a = -K; a <= K; ++a)
    for (int b = -k1; b <= k1; ++b)
      for (int c = -k2; c <= k2; ++c) {
        const std::array<double, 3> y{z[0] + a * L, z[1] + b * L, z[2] + c * L};
        const double r = std::sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
        if (r > Rc) continue;
        acc += r < near ? box_average(k, d, y, h) : kernel_radial(k, r).value();
      }
  acc += sphere_area(d - 1) * std::pow(Rc, d - k.p) / ((k.p - d) * std::pow(L, d));
  return acc;
}

inline std::shared_ptr<const LatticeKernel> build_lattice_kernel(const KernelSpec& k, int d, int N, double L) {
  auto lk = std::make_shared<LatticeKernel>();
  lk->d = d;
  lk->N = N;
  lk->L = L;
  VoxelSet shape = VoxelSet::make(d, N, L);
  const std::size_t n = shape.size();
  const double h = L / N;
  std::map<std::array<int, 3>, std::int32_t> ids;
  lk->orbit.resize(n);
  for (std::size_t i = 0; i < n; ++i) ids.emplace(canonical_offset(shape.coords(i), d, N), 0);
  std::int32_t next = 0;
  for (auto& [key, id] : ids) {
    id = next++;
    const bool zero = key[0] == 0 && key[1] == 0 && key[2] == 0;
    lk->w_orbit.push_back(zero ? 0.0 : periodized(k, d, L, h, {h * key[0], h * key[1], h * key[2]}));
  }
  lk->dense.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    lk->orbit[i] = ids.at(canonical_offset(shape.coords(i), d, N));
    lk->dense[i] = lk->w_orbit[lk->orbit[i]];
  }
  // total grouped by orbit as well
  std::vector<std::int64_t> count(lk->w_orbit.size(), 0);
  for (auto o : lk->orbit) ++count[o];
  for (std::size_t o = 0; o < count.size(); ++o) lk->total += static_cast<double>(count[o]) * lk->w_orbit[o];
  return lk;
}

inline std::shared_ptr<const LatticeKernel> lattice_kernel(const KernelSpec& k, int d, int N, double L) {
  static std::mutex m;
  static std::map<std::tuple<double, int, double, int, double>, std::shared_ptr<const LatticeKernel>> cache;
  const auto key = std::make_tuple(k.p, d, k.cutoff, N, L);
  {
    std::lock_guard<std::mutex> lock(m);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto lk = build_lattice_kernel(k, d, N, L);
  std::lock_guard<std::mutex> lock(m);
  if (cache.size() > 16) cache.clear();
  return cache.emplace(key, lk).first->second;
}

// sum_m (A0 - A(m)) w(m), grouped by orbit with exact integer partial sums
inline double nonlocal_sum(const VoxelSet& v, const LatticeKernel& lk) {
  const auto A = autocorrelation(v);
  const std::int64_t A0 = A[0];
  std::vector<std::int64_t> S(lk.w_orbit.size(), 0);
  for (std::size_t i = 0; i < A.size(); ++i) S[lk.orbit[i]] += A0 - A[i];
  double acc = 0;
  for (std::size_t o = 0; o < S.size(); ++o) acc += static_cast<double>(S[o]) * lk.w_orbit[o];
  return acc;
}

// ---- perimeter

// Perimeter from short-range autocorrelation.  For a digitized boundary with
// normal n, the number of cells x in E with x+m outside is h^{1-d} times the
// integral of (m.n)_+, so a weighted sum over a few symmetric offset families
// measures the integral of phi(n) = sum_F c_F sum_{m in F, one of +-m} |m.n|.
// The weights come from a minimax fit of phi to 1 over directions, with the
// angular mean of phi equal to 1 and phi(axis) = 1 exactly.  Every family is an orbit of the cube symmetries and the per-family
// counts are integers, so the estimate is exact under grid symmetries.
struct PerimeterStencil {
  std::vector<std::vector<std::array<int, 3>>> families;  // both signs
  std::vector<double> weight;
};

inline const PerimeterStencil& perimeter_stencil(int d) {
  static const auto build = [](int d) {
    std::vector<std::array<int, 3>> bases;
    std::vector<double> c;
    if (d == 1) {
      bases = {{1, 0, 0}};
      c = {1};
    } else if (d == 2) {
      bases = {{1, 0, 0}, {1, 1, 0}, {2, 1, 0}};
      c = {0.19102528, 0.11243208, 0.09735176};
    } else {
      bases = {{1, 0, 0}, {1, 1, 0}, {1, 1, 1}, {2, 1, 0}, {2, 1, 1}};
      c = {0.04139773, 0.02, 0.02787699, 0.02166049, 0.03169803};
    }
    PerimeterStencil st;
    for (const auto& base : bases) {
      std::vector<std::array<int, 3>> fam;
      std::array<int, 3> p = base;
      std::sort(p.begin(), p.begin() + d);
      do {
        for (int sgn = 0; sgn < (1 << d); ++sgn) {
          std::array<int, 3> m{0, 0, 0};
          for (int a = 0; a < d; ++a) m[a] = (sgn >> a) & 1 ? -p[a] : p[a];
          if (std::find(fam.begin(), fam.end(), m) == fam.end()) fam.push_back(m);
        }
      } while (std::next_permutation(p.begin(), p.begin() + d));
      st.families.push_back(fam);
    }
    // phi(axis) = 1; each family lists both signs, hence the half
    double axis = 0;
    for (std::size_t f = 0; f < bases.size(); ++f) {
      double s = 0;
      for (const auto& m : st.families[f]) s += std::abs(m[0]);
      axis += c[f] * 0.5 * s;
    }
    for (double x : c) st.weight.push_back(x / axis);
    return st;
  };
  static const PerimeterStencil s1 = build(1), s2 = build(2), s3 = build(3);
  return d == 1 ? s1 : d == 2 ? s2 : s3;
}

// #{x in E : x+m not in E} summed over each family
inline std::vector<std::int64_t> stencil_counts(const VoxelSet& v) {
  const auto& st = perimeter_stencil(v.d);
  std::vector<std::int64_t> cnt(st.families.size(), 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v.bits[i]) continue;
    const auto c = v.coords(i);
    for (std::size_t f = 0; f < st.families.size(); ++f)
      for (const auto& m : st.families[f]) cnt[f] += !v.bits[v.index(c[0] + m[0], c[1] + m[1], c[2] + m[2])];
  }
  return cnt;
}

inline double perimeter_from_counts(const std::vector<std::int64_t>& cnt, int d, double h) {
  const auto& st = perimeter_stencil(d);
  double acc = 0;
  for (std::size_t f = 0; f < cnt.size(); ++f) acc += st.weight[f] * static_cast<double>(cnt[f]);
  return acc * std::pow(h, d - 1);
}

}  // namespace detail

// Worst relative bias of lattice_perimeter on straight boundaries over all
// normal directions.  Axis-aligned boundaries are exact.  Structures thinner
// than the stencil reach (two cells) are undercounted.
inline double perimeter_bias(int d) { return d == 1 ? 0.0 : d == 2 ? 0.021 : 0.025; }

inline double lattice_perimeter(const VoxelSet& v) {
  return detail::perimeter_from_counts(detail::stencil_counts(v), v.d, v.spacing());
}

enum class LatticeMode { tau, tilde };

// F = (J Per - NL) / L^d with NL = int_cell int_R^d |chi(x+zeta) - chi(x)| K dzeta dx.
// tau mode: kernel K_tau and J = J_tau.  tilde mode: unit kernel and the
// caller's J.
inline EnergyReport lattice_energy(const VoxelSet& v, const KernelSpec& spec, LatticeMode mode = LatticeMode::tau,
                                   double J = 0) {
  if (v.d != spec.d) throw ConfigError("voxel set and kernel dimensions differ");
  KernelSpec k = spec;
  if (mode == LatticeMode::tau) {
    if (spec.tau <= 0) throw ConfigError("lattice energy needs tau > 0; use the slicing route for tau = 0");
    J = j_tau(spec).value();
  } else {
    k = KernelSpec::unit(spec.p, spec.d);
  }
  const auto lk = detail::lattice_kernel(k, v.d, v.N, v.L);
  const double h = v.spacing();
  const double vol = std::pow(v.L, v.d);
  const double per = lattice_perimeter(v);
  const double nl = 2 * std::pow(h, 2 * v.d) * detail::nonlocal_sum(v, *lk);
  EnergyReport r;
  r.route = mode == LatticeMode::tau ? "lattice" : "lattice-tilde";
  r.local = J * per / vol;
  r.nonlocal = -nl / vol;
  r.value = r.local + r.nonlocal;
  r.bound = perimeter_bias(v.d) * std::abs(r.local);
  r.samples = v.size();
  r.note = "kernel second order in h; perimeter bias bounded by perimeter_bias(d)";
  return r;
}

// ---- stripedness

struct Stripedness {
  double score = 0;
  std::array<int, 3> normal{0, 0, 0};  // integer normal of the best stripe family
  double angle = 0;                     // atan2(normal[1], normal[0]) in d = 2
};

// L1 proximity to the nearest stripe set with a primitive integer normal of
// max-norm <= max_coeff.  Stripe sets with such a normal are the fields
// constant on the classes (n . i) mod N.
inline Stripedness stripedness(const VoxelSet& v, int max_coeff = 8) {
  Stripedness best;
  const double phi = v.fraction();
  const double trivial = std::min(phi, 1 - phi);
  if (trivial == 0) return best;
  std::vector<std::array<int, 3>> dirs;
  const int M = std::max(1, max_coeff);
  const int mb = v.d >= 2 ? M : 0, mc = v.d >= 3 ? M : 0;
  for (int a = -M; a <= M; ++a)
    for (int b = -mb; b <= mb; ++b)
      for (int c = -mc; c <= mc; ++c) {
        if (std::gcd(std::gcd(std::abs(a), std::abs(b)), std::abs(c)) != 1) continue;
        // one representative of +-n
        const std::array<int, 3> n{a, b, c};
        bool pos = false;
        for (int x : n)
          if (x != 0) {
            pos = x > 0;
            break;
          }
        if (pos) dirs.push_back(n);
      }
  std::vector<std::int64_t> ones(v.N), cnt(v.N);
  for (const auto& n : dirs) {
    std::fill(ones.begin(), ones.end(), 0);
    std::fill(cnt.begin(), cnt.end(), 0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto c = v.coords(i);
      const long s = static_cast<long>(n[0]) * c[0] + static_cast<long>(n[1]) * c[1] + static_cast<long>(n[2]) * c[2];
      const int cl = static_cast<int>(((s % v.N) + v.N) % v.N);
      ++cnt[cl];
      ones[cl] += v.bits[i];
    }
    std::int64_t miss = 0;
    for (int cl = 0; cl < v.N; ++cl) miss += std::min(ones[cl], cnt[cl] - ones[cl]);
    const double dist = static_cast<double>(miss) / static_cast<double>(v.size());
    const double score = std::clamp(1 - dist / trivial, 0.0, 1.0);
    if (score > best.score) {
      best.score = score;
      best.normal = n;
      best.angle = std::atan2(n[1], n[0]);
    }
  }
  return best;
}

// ---- persistence: 32-byte header, packed bits, text sidecar

namespace detail {
template <class T>
void put_le(std::ostream& os, T x) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &x, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}
template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw ConfigError("truncated voxel file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T x;
  std::memcpy(&x, b, sizeof(T));
  return x;
}
}  // namespace detail

inline void write_voxels(const VoxelSet& v, const std::string& path, const std::string& label = "") {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path);
  os.write("NLPF", 4);
  detail::put_le<std::uint16_t>(os, 1);
  detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(v.d));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.N));
  detail::put_le<std::uint32_t>(os, 0);
  detail::put_le<double>(os, v.L);
  detail::put_le<std::uint64_t>(os, 0);  // flags
  std::vector<unsigned char> packed((v.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v.bits[i]) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
  os.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
  std::ofstream meta(path + ".meta");
  meta << std::setprecision(17) << "format nlpf-voxels 1\nd " << v.d << "\nN " << v.N << "\nL " << v.L
       << "\npopcount " << v.popcount() << "\nfraction " << v.fraction() << "\nlabel " << label << "\n";
}

inline VoxelSet read_voxels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NLPF", 4) != 0) throw ConfigError("not an NLPF voxel file");
  const auto version = detail::get_le<std::uint16_t>(is);
  if (version != 1) throw ConfigError("unsupported voxel file version");
  const int d = detail::get_le<std::uint16_t>(is);
  const int N = static_cast<int>(detail::get_le<std::uint32_t>(is));
  detail::get_le<std::uint32_t>(is);
  const double L = detail::get_le<double>(is);
  detail::get_le<std::uint64_t>(is);
  VoxelSet v = VoxelSet::make(d, N, L);
  std::vector<unsigned char> packed((v.size() + 7) / 8);
  if (!is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size())))
    throw ConfigError("truncated voxel file");
  for (std::size_t i = 0; i < v.size(); ++i) v.bits[i] = (packed[i / 8] >> (i % 8)) & 1;
  return v;
}

}  // namespace nlpf

#pragma once
// Candidate pattern families and simulated annealing on periodic grids.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <atomic>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nlpf/lattice.hpp"
#include "nlpf/rng.hpp"

namespace nlpf {

// Raised when the incremental energy drifts from a full recomputation.
struct AuditError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class CandidateKind { stripes, droplets, checkerboard, random, file };

struct CandidateSpec {
  CandidateKind kind = CandidateKind::stripes;
  std::string label;
  int d = 2;
  std::vector<int> direction{1, 0};  // integer normal for stripes
  double half_period = 1;
  double phase = 0;                  // offset of the first band along the normal
  std::string lattice = "square";    // droplets: square or hex (staggered rows)
  double radius = 0.25;
  int count = 2;                     // droplets per side
  double cell = 1;                   // checkerboard square side
  double fraction = 0.5;
  std::uint64_t seed = 1;
  std::string path;

  std::string name() const {
    if (!label.empty()) return label;
    std::ostringstream os;
    os << std::setprecision(6);
    switch (kind) {
      case CandidateKind::stripes:
        os << "stripes(";
        for (std::size_t i = 0; i < direction.size(); ++i) os << (i ? "," : "") << direction[i];
        os << ";h=" << half_period << ")";
        break;
      case CandidateKind::droplets: os << "droplets(" << lattice << ";r=" << radius << ";n=" << count << ")"; break;
      case CandidateKind::checkerboard: os << "checkerboard(" << cell << ")"; break;
      case CandidateKind::random: os << "random(" << fraction << ";seed=" << seed << ")"; break;
      case CandidateKind::file: os << "file(" << path << ")"; break;
    }
    return os.str();
  }
};

namespace detail {
inline bool near_integer(double x) { return std::abs(x - std::round(x)) < 1e-9 * std::max(1.0, std::abs(x)); }
}  // namespace detail

inline VoxelSet make_candidate(const CandidateSpec& c, int N, double L) {
  VoxelSet v = VoxelSet::make(c.d, N, L);
  const double h = v.spacing();
  auto centre = [&](std::size_t i) {
    const auto k = v.coords(i);
    Vec x{0, 0, 0};
    for (int a = 0; a < v.d; ++a) x[a] = (k[a] + 0.5) * h;
    return x;
  };
  switch (c.kind) {
    case CandidateKind::stripes: {
      if (static_cast<int>(c.direction.size()) != c.d) throw ConfigError("stripe direction must have d integer entries");
      int g = 0;
      double norm2 = 0;
      for (int x : c.direction) {
        g = std::gcd(g, std::abs(x));
        norm2 += static_cast<double>(x) * x;
      }
      if (g != 1) throw ConfigError("stripe direction must be a primitive integer vector");
      if (!(c.half_period > 0)) throw ConfigError("stripe half-period must be positive");
      // the normal (a,b,..)/|.| tiles the cell iff L / (2 h |(a,b,..)|) is an integer
      const double q = L / (2 * c.half_period * std::sqrt(norm2));
      if (q < 1 - 1e-9 || !detail::near_integer(q))
        throw ConfigError("stripe direction and half-period do not tile the periodic cell");
      std::vector<double> n(c.d);
      for (int a = 0; a < c.d; ++a) n[a] = c.direction[a] / std::sqrt(norm2);
      return rasterize(periodic(stripes(c.d, n, c.half_period, c.phase), L), N, L);
    }
    case CandidateKind::droplets: {
      if (c.count < 1) throw ConfigError("droplet count must be >= 1");
      if (c.lattice != "square" && c.lattice != "hex") throw ConfigError("droplet lattice must be square or hex");
      if (c.lattice == "hex" && c.count % 2) throw ConfigError("hex droplet lattice needs an even count to be cell-periodic");
      const double a = L / c.count;
      if (!(c.radius > 0) || c.radius >= 0.5 * a) throw ConfigError("droplet radius must be in (0, spacing/2)");
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto x = centre(i);
        bool in = false;
        // nearest lattice site in each axis, rows staggered by a/2 for hex
        const double row = std::floor(x[0] / a);
        for (int dr = -1; dr <= 1 && !in; ++dr) {
          const double r = row + dr;
          const double off = (c.lattice == "hex" && std::fmod(std::abs(r), 2.0) == 1.0) ? 0.5 * a : 0.0;
          const double cx = (r + 0.5) * a;
          double dist2 = (x[0] - cx) * (x[0] - cx);
          for (int ax = 1; ax < v.d; ++ax) {
            const double o = ax == 1 ? off : 0.0;
            const double t = x[ax] - o - 0.5 * a;
            const double y = t - a * std::round(t / a);
            dist2 += y * y;
          }
          in = dist2 < c.radius * c.radius;
        }
        v.bits[i] = in;
      }
      return v;
    }
    case CandidateKind::checkerboard: {
      const double q = L / c.cell;
      if (!(c.cell > 0) || !detail::near_integer(q) || std::llround(q) % 2)
        throw ConfigError("checkerboard cell must divide L an even number of times");
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto x = centre(i);
        long s = 0;
        for (int a = 0; a < v.d; ++a) s += static_cast<long>(std::floor(x[a] / c.cell));
        v.bits[i] = s % 2 == 0;
      }
      return v;
    }
    case CandidateKind::random: {
      if (!(c.fraction >= 0 && c.fraction <= 1)) throw ConfigError("random fraction must be in [0,1]");
      auto g = stream(c.seed, 0);
      for (auto& b : v.bits) b = uniform01(g) < c.fraction;
      return v;
    }
    case CandidateKind::file: {
      auto f = read_voxels(c.path);
      if (f.d != c.d || f.N != N || f.L != L) throw ConfigError("voxel file " + c.path + " does not match d, N, L");
      return f;
    }
  }
  return v;
}

inline CandidateSpec candidate_from_json(const nlohmann::json& j, int d = 2) {
  CandidateSpec c;
  c.d = j.value("d", d);
  const std::string kind = j.at("kind").get<std::string>();
  c.label = j.value("label", std::string{});
  if (kind == "stripes") {
    c.kind = CandidateKind::stripes;
    if (j.contains("direction")) c.direction = j.at("direction").get<std::vector<int>>();
    else {
      c.direction.assign(c.d, 0);
      c.direction[0] = 1;
    }
    c.half_period = j.at("half_period").get<double>();
    c.phase = j.value("phase", 0.0);
  } else if (kind == "droplet-lattice" || kind == "droplets") {
    c.kind = CandidateKind::droplets;
    c.lattice = j.value("lattice", std::string("square"));
    c.radius = j.at("radius").get<double>();
    c.count = j.value("count", 2);
  } else if (kind == "checkerboard") {
    c.kind = CandidateKind::checkerboard;
    c.cell = j.at("cell").get<double>();
  } else if (kind == "random") {
    c.kind = CandidateKind::random;
    c.fraction = j.value("fraction", 0.5);
    c.seed = j.value("seed", std::uint64_t{1});
  } else if (kind == "from-file") {
    c.kind = CandidateKind::file;
    c.path = j.at("path").get<std::string>();
  } else {
    throw ConfigError("unknown candidate kind '" + kind + "'");
  }
  return c;
}

// Energies of the candidates, sorted ascending.  Rows whose energies coincide
// to 1e-12 relative are ordered by label and flagged.
inline std::vector<EnergyReport> compare_candidates(const std::vector<CandidateSpec>& specs, const KernelSpec& k, int N,
                                                    double L, LatticeMode mode = LatticeMode::tau, double J = 0) {
  std::vector<EnergyReport> rows;
  for (const auto& c : specs) {
    auto r = lattice_energy(make_candidate(c, N, L), k, mode, J);
    r.label = c.name();
    rows.push_back(r);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const EnergyReport& a, const EnergyReport& b) {
    if (a.value != b.value) return a.value < b.value;
    return a.label < b.label;
  });
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const double tol = 1e-12 * std::max({1.0, std::abs(rows[i].value), std::abs(rows[i + 1].value)});
    if (std::abs(rows[i + 1].value - rows[i].value) <= tol) {
      if (rows[i + 1].label < rows[i].label) std::swap(rows[i], rows[i + 1]);
      rows[i].flagged = rows[i + 1].flagged = true;
    }
  }
  return rows;
}

// ---- annealing

struct AnnealSchedule {
  double T0 = 0;                 // 0: calibrate to target_acceptance
  double target_acceptance = 0.6;
  double cooling = 0.9;
  int sweeps_per_temp = 2;
  double mix_single = 0.80, mix_block = 0.15, mix_shift = 0.05;
  double T_min = 0;              // 0: T0 * 1e-3
  int stall_sweeps = 40;
  int max_sweeps = 200;
  std::uint64_t seed = 1;
  int stripedness_coeff = 4;     // direction range for the traced stripedness

  void validate() const {
    if (!(cooling > 0 && cooling < 1)) throw ConfigError("cooling factor must lie in (0,1)");
    if (sweeps_per_temp < 1) throw ConfigError("sweeps per temperature must be >= 1");
    if (max_sweeps < 0) throw ConfigError("max sweeps must be >= 0");
    if (T0 < 0 || T_min < 0) throw ConfigError("temperatures must be >= 0");
    if (mix_single < 0 || mix_block < 0 || mix_shift < 0 || mix_single + mix_block + mix_shift <= 0)
      throw ConfigError("proposal mix must be nonnegative and not all zero");
    if (!(target_acceptance > 0 && target_acceptance < 1)) throw ConfigError("target acceptance must lie in (0,1)");
  }
};

struct TraceRow {
  int sweep = 0;
  double temperature = 0;
  double energy = 0;
  double best = 0;
  double stripedness = 0;
  double acceptance = 0;
};

struct AnnealResult {
  VoxelSet final_;
  VoxelSet best;
  std::vector<TraceRow> trace;
  double audit_error = 0;  // relative, final incremental vs recomputed
  double T0 = 0;
};

namespace detail {

// Single-owner annealing state on a d = 2 grid: bits, the
// kernel convolution U = w * chi, and the running energy terms.
class Chain {
 public:
  Chain(const VoxelSet& init, const KernelSpec& k) : v_(init), k_(k) {
    if (v_.d != 2) throw ConfigError("annealing supports d = 2 grids");
    J_ = j_tau(k).value();
    lk_ = lattice_kernel(k, 2, v_.N, v_.L);
    const double h = v_.spacing();
    scale_ = 2 * std::pow(h, 4);
    vol_ = v_.L * v_.L;
    U_.assign(v_.size(), 0.0);
    for (std::size_t x = 0; x < v_.size(); ++x)
      if (v_.bits[x]) add_row(x, 1);
    n_ = static_cast<std::int64_t>(v_.popcount());
    const auto full = lattice_energy(v_, k);
    cnt_ = stencil_counts(v_);
    per_ = perimeter_from_counts(cnt_, 2, v_.spacing());
    nl_ = -full.nonlocal * vol_;
    energy_ = full.value;
  }

  const VoxelSet& field() const { return v_; }
  double energy() const { return energy_; }
  int N() const { return v_.N; }

  // Energy change of flipping the given distinct cells.
  double delta(const std::vector<std::size_t>& F) {
    if (F.empty()) return 0;
    std::int64_t dn = 0;
    double lin = 0, pair = 0;
    for (std::size_t a = 0; a < F.size(); ++a) {
      const int da = v_.bits[F[a]] ? -1 : 1;
      dn += da;
      lin += da * U_[F[a]];
      for (std::size_t b = 0; b < F.size(); ++b)
        if (a != b) pair += da * (v_.bits[F[b]] ? -1 : 1) * lk_->dense[offset(F[a], F[b])];
    }
    const double dQ = 2 * lin + pair;
    const double dNL = scale_ * (static_cast<double>(dn) * lk_->total - dQ);
    auto dc = count_delta(F);
    for (std::size_t f = 0; f < dc.size(); ++f) dc[f] += cnt_[f];
    const double dPer = perimeter_from_counts(dc, 2, v_.spacing()) - per_;
    return (J_ * dPer - dNL) / vol_;
  }

  void apply(const std::vector<std::size_t>& F, double dE) {
    if (F.empty()) return;
    std::int64_t dn = 0;
    double lin = 0, pair = 0;
    for (std::size_t a = 0; a < F.size(); ++a) {
      const int da = v_.bits[F[a]] ? -1 : 1;
      dn += da;
      lin += da * U_[F[a]];
      for (std::size_t b = 0; b < F.size(); ++b)
        if (a != b) pair += da * (v_.bits[F[b]] ? -1 : 1) * lk_->dense[offset(F[a], F[b])];
    }
    nl_ += scale_ * (static_cast<double>(dn) * lk_->total - (2 * lin + pair));
    const auto dc = count_delta(F);
    for (std::size_t f = 0; f < dc.size(); ++f) cnt_[f] += dc[f];
    per_ = perimeter_from_counts(cnt_, 2, v_.spacing());
    for (auto x : F) {
      const int dx = v_.bits[x] ? -1 : 1;
      v_.bits[x] ^= 1;
      add_row(x, dx);
    }
    n_ += dn;
    energy_ += dE;
  }

  // Energy from the maintained terms rather than the accumulated deltas.
  double energy_from_terms() const { return (J_ * per_ - nl_) / vol_; }

 private:
  std::size_t offset(std::size_t x, std::size_t y) const {
    const auto a = v_.coords(x), b = v_.coords(y);
    return v_.index(b[0] - a[0], b[1] - a[1]);
  }

  void add_row(std::size_t x, int sign) {
    const auto c = v_.coords(x);
    const int N = v_.N;
    for (int i = 0; i < N; ++i) {
      const std::size_t row = static_cast<std::size_t>(((i - c[0]) % N + N) % N) * N;
      const std::size_t base = static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) U_[base + j] += sign * lk_->dense[row + ((j - c[1]) % N + N) % N];
    }
  }

  // Change of the stencil counts from flipping F: only pairs (x, x+m) with an
  // endpoint in F move; pairs with both endpoints in F are counted once.
  std::vector<std::int64_t> count_delta(const std::vector<std::size_t>& F) {
    const auto& st = perimeter_stencil(2);
    std::vector<std::size_t> sorted(F);
    std::sort(sorted.begin(), sorted.end());
    auto flipped = [&](std::size_t x) { return std::binary_search(sorted.begin(), sorted.end(), x); };
    auto val = [&](std::size_t x, bool after) { return after && flipped(x) ? 1 - v_.bits[x] : v_.bits[x]; };
    std::vector<std::int64_t> d(st.families.size(), 0);
    for (auto x : F) {
      const auto c = v_.coords(x);
      for (std::size_t f = 0; f < st.families.size(); ++f)
        for (const auto& m : st.families[f]) {
          const std::size_t fwd = v_.index(c[0] + m[0], c[1] + m[1]);
          const std::size_t bwd = v_.index(c[0] - m[0], c[1] - m[1]);
          // pair (x, fwd) always; pair (bwd, x) unless bwd is flipped too,
          // in which case it is visited from bwd as its forward pair
          d[f] += (val(x, true) && !val(fwd, true)) - (val(x, false) && !val(fwd, false));
          if (!flipped(bwd)) d[f] += (val(bwd, true) && !val(x, true)) - (val(bwd, false) && !val(x, false));
        }
    }
    return d;
  }

  VoxelSet v_;
  KernelSpec k_;
  std::shared_ptr<const LatticeKernel> lk_;
  std::vector<double> U_;
  std::vector<std::int64_t> cnt_;
  std::int64_t n_ = 0;
  double J_ = 0, scale_ = 0, vol_ = 0, per_ = 0, nl_ = 0, energy_ = 0;
};

inline std::vector<std::size_t> propose(const VoxelSet& v, const AnnealSchedule& s, Rng& g) {
  const int N = v.N;
  auto pick = [&] { return static_cast<int>(uniform01(g) * N); };
  const double total = s.mix_single + s.mix_block + s.mix_shift;
  const double u = uniform01(g) * total;
  std::vector<std::size_t> F;
  if (u < s.mix_single) {
    F.push_back(v.index(pick(), pick()));
  } else if (u < s.mix_single + s.mix_block) {
    // set a 2x2 block to the opposite of its first cell
    const int i = pick(), j = pick();
    const auto first = v.bits[v.index(i, j)];
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        if (v.bits[v.index(i + a, j + b)] == first) F.push_back(v.index(i + a, j + b));
  } else {
    // cyclic shift of one grid line by one cell
    const int axis = uniform01(g) < 0.5 ? 0 : 1, r = pick(), dir = uniform01(g) < 0.5 ? -1 : 1;
    for (int t = 0; t < N; ++t) {
      const std::size_t here = axis == 0 ? v.index(r, t) : v.index(t, r);
      const std::size_t from = axis == 0 ? v.index(r, t - dir) : v.index(t - dir, r);
      if (v.bits[here] != v.bits[from]) F.push_back(here);
    }
  }
  return F;
}

// Temperature giving the target mean acceptance over sampled proposals.
inline double calibrate_temperature(Chain& c, const AnnealSchedule& s, Rng& g) {
  std::vector<double> up;
  for (int i = 0; i < 512; ++i) {
    const double dE = c.delta(propose(c.field(), s, g));
    if (dE > 0) up.push_back(dE);
  }
  if (up.empty()) return 1e-12;
  const double frac_down = 1.0 - static_cast<double>(up.size()) / 512.0;
  auto acc = [&](double T) {
    double a = 0;
    for (double d : up) a += std::exp(-d / T);
    return frac_down + (1 - frac_down) * a / up.size();
  };
  if (acc(1e-300) >= s.target_acceptance) return *std::min_element(up.begin(), up.end());
  double lo = std::log(*std::min_element(up.begin(), up.end())) - 20;
  double hi = std::log(*std::max_element(up.begin(), up.end())) + 20;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (acc(std::exp(mid)) < s.target_acceptance ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

}  // namespace detail

inline AnnealResult anneal(const VoxelSet& init, const KernelSpec& k, const AnnealSchedule& s) {
  s.validate();
  if (k.tau <= 0) throw ConfigError("annealing needs tau > 0");
  detail::Chain chain(init, k);
  AnnealResult out;
  out.final_ = init;
  out.best = init;
  double best = chain.energy();
  out.trace.push_back({0, 0, best, best, stripedness(init, s.stripedness_coeff).score, 0});
  if (s.max_sweeps == 0) return out;

  Rng calib = stream(s.seed, 1), g = stream(s.seed, 0);
  double T = s.T0 > 0 ? s.T0 : detail::calibrate_temperature(chain, s, calib);
  out.T0 = T;
  out.trace.front().temperature = T;
  const double T_min = s.T_min > 0 ? s.T_min : 1e-3 * T;
  const std::size_t per_sweep = init.size();
  int stall = 0;
  for (int sweep = 1; sweep <= s.max_sweeps; ++sweep) {
    std::size_t accepted = 0;
    for (std::size_t m = 0; m < per_sweep; ++m) {
      const auto F = detail::propose(chain.field(), s, g);
      if (F.empty()) continue;
      const double dE = chain.delta(F);
      const double u = uniform01(g);
      if (dE <= 0 || u < std::exp(-dE / T)) {
        chain.apply(F, dE);
        ++accepted;
      }
    }
    if (chain.energy() < best) {
      best = chain.energy();
      out.best = chain.field();
      stall = 0;
    } else {
      ++stall;
    }
    out.trace.push_back({sweep, T, chain.energy(), best, stripedness(chain.field(), s.stripedness_coeff).score,
                         static_cast<double>(accepted) / per_sweep});
    if (sweep % s.sweeps_per_temp == 0) T *= s.cooling;
    if (T < T_min || stall >= s.stall_sweeps) break;
  }
  out.final_ = chain.field();
  const double fresh = lattice_energy(out.final_, k).value;
  const double scale = std::max({std::abs(fresh), std::abs(lattice_energy(out.final_, k).local), 1e-300});
  out.audit_error = std::abs(chain.energy() - fresh) / scale;
  if (out.audit_error > 1e-6)
    throw AuditError("annealing delta audit failed: incremental " + std::to_string(chain.energy()) + " vs recomputed " +
                     std::to_string(fresh));
  return out;
}

// Independent chains, one per seed, run on up to `threads` workers.  Results
// are returned in seed order, so output does not depend on the thread count.
inline std::vector<AnnealResult> anneal_chains(const std::vector<VoxelSet>& inits, const KernelSpec& k,
                                               const AnnealSchedule& s, int threads = 1) {
  std::vector<AnnealResult> out(inits.size());
  std::vector<std::exception_ptr> errs(inits.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < inits.size();) {
      try {
        auto si = s;
        si.seed = mix_seed(s.seed + i);
        out[i] = anneal(inits[i], k, si);
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(inits.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace nlpf

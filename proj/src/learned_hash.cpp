#include "lead/learned_hash.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "lead/hashing.hpp"

namespace lead {

namespace {

using Real = long double;

std::size_t family_params(LeafFamily family, unsigned radix_bits) {
  switch (family) {
    case LeafFamily::Linear:
      return 2;
    case LeafFamily::Cubic:
      return 4;
    case LeafFamily::RadixTable:
      return (std::size_t{1} << radix_bits) + 1;
  }
  return 0;
}

// Gaussian elimination with partial pivoting. Returns false when singular.
bool solve_dense(std::vector<Real>& a, std::vector<Real>& b, std::size_t n) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r * n + col]) > std::fabs(a[pivot * n + col])) pivot = r;
    Real scale = 0;
    for (std::size_t c = 0; c < n; ++c) scale = std::max(scale, std::fabs(a[col * n + c]));
    if (std::fabs(a[pivot * n + col]) <= 1e-15L * std::max<Real>(scale, 1e-300L)) return false;
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[pivot * n + c], a[col * n + c]);
      std::swap(b[pivot], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const Real f = a[r * n + col] / a[col * n + col];
      if (f == 0) continue;
      for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    Real acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a[i * n + c] * b[c];
    b[i] = acc / a[i * n + i];
  }
  return true;
}

struct LinearFit {
  Real intercept = 0;
  Real slope = 0;
};

// Centered least squares; slope clamped to >= 0 (the intercept then becomes
// the mean so the fit stays unbiased).
template <class X, class Y>
LinearFit fit_linear(std::size_t n, X&& x, Y&& y) {
  LinearFit fit;
  if (n == 0) return fit;
  Real sx = 0, sy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x(i);
    sy += y(i);
  }
  const Real mx = sx / n, my = sy / n;
  Real sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real dx = x(i) - mx;
    sxx += dx * dx;
    sxy += dx * (y(i) - my);
  }
  if (sxx <= 0 || sxy <= 0) {
    fit.intercept = my;
    return fit;
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

std::uint64_t lineage_of(const Router& router, std::uint64_t n, std::uint32_t branching, LeafFamily family,
                         unsigned __int128 h, unsigned radix_bits) {
  std::string bytes;
  auto put = [&bytes](const void* p, std::size_t len) { bytes.append(static_cast<const char*>(p), len); };
  put(&router.kind, 1);
  put(&router.slope, 8);
  put(&router.intercept, 8);
  put(&router.key_min, 8);
  put(&router.shift, 1);
  put(&router.bits, 1);
  for (auto v : router.table) put(&v, 8);
  put(&n, 8);
  put(&branching, 4);
  put(&family, 1);
  const auto h_lo = static_cast<std::uint64_t>(h);
  put(&h_lo, 8);
  put(&radix_bits, 4);
  return fmix64(fnv1a64(bytes));
}

// ----- little-endian wire helpers -------------------------------------------

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw Error("corrupt-blob", "truncated model blob");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

constexpr std::uint8_t kBlobSegments = 0;
constexpr std::uint8_t kBlobFull = 1;

struct Header {
  std::uint32_t version = 0;
  std::uint32_t branching = 0;
  std::uint64_t count = 0;
  unsigned __int128 hash_space = 0;
  LeafFamily family = LeafFamily::Linear;
  std::uint32_t author = 0;
  std::uint64_t lineage = 0;
  std::uint8_t kind = 0;
  std::uint32_t records = 0;
};

void write_header(Writer& w, const RmiModel& m, std::uint8_t kind, std::uint32_t records) {
  w.bytes("LEAD", 4);
  w.u32(m.version());
  w.u32(m.branching());
  w.u64(m.base_count());
  w.u64(static_cast<std::uint64_t>(m.hash_space()));  // 2^64 wraps to 0
  w.u8(static_cast<std::uint8_t>(m.family()));
  w.u32(m.author());
  w.u64(m.lineage());
  w.u8(kind);
  w.u32(records);
}

Header read_header(Reader& r) {
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, "LEAD", 4) != 0) throw Error("corrupt-blob", "bad magic");
  Header h;
  h.version = r.u32();
  h.branching = r.u32();
  h.count = r.u64();
  const std::uint64_t hs = r.u64();
  h.hash_space = hs == 0 ? (static_cast<unsigned __int128>(1) << 64) : hs;
  const auto fam = r.u8();
  if (fam < 1 || fam > 3) throw Error("corrupt-blob", "unknown leaf family");
  h.family = static_cast<LeafFamily>(fam);
  h.author = r.u32();
  h.lineage = r.u64();
  h.kind = r.u8();
  h.records = r.u32();
  return h;
}

// Parameters with the anchor folded in: constant term shifted by the offset,
// the rest scaled about the leaf's value at u = 0.
std::array<double, kMaxLeafParams> folded_params(const LeafModel& leaf, LeafFamily family, std::size_t count) {
  auto p = leaf.params;
  const double s = leaf.anchor.scale, o = leaf.anchor.offset;
  if (family == LeafFamily::RadixTable) {
    const double base = p[0];
    for (std::size_t i = 0; i < count; ++i) p[i] = base + (p[i] - base) * s + o;
  } else {
    p[0] += o;
    for (std::size_t i = 1; i < count; ++i) p[i] *= s;
  }
  return p;
}

void write_leaf(Writer& w, const RmiModel& m, std::uint32_t index) {
  const auto& leaf = m.leaf(index);
  const auto count = m.param_count();
  const auto p = folded_params(leaf, m.family(), count);
  w.u32(index);
  for (std::size_t i = 0; i < count; ++i) w.f32(static_cast<float>(p[i]));
  w.u64(leaf.rank_lo);
  w.u64(leaf.rank_hi);
}

LeafRecord read_leaf(Reader& r, std::size_t count) {
  LeafRecord rec;
  rec.index = r.u32();
  for (std::size_t i = 0; i < count; ++i) rec.params[i] = r.f32();
  rec.rank_lo = r.u64();
  rec.rank_hi = r.u64();
  return rec;
}

LeafModel leaf_from_record(const LeafRecord& rec, std::size_t count) {
  LeafModel leaf;
  for (std::size_t i = 0; i < count; ++i) leaf.params[i] = rec.params[i];
  leaf.rank_lo = rec.rank_lo;
  leaf.rank_hi = std::max(rec.rank_lo, rec.rank_hi);
  return leaf;
}

void require_compatible(const RmiModel& m, LeafFamily family, std::uint32_t branching, std::uint64_t lineage) {
  if (family != m.family() || branching != m.branching() || lineage != m.lineage())
    throw Error("incompatible-model", "family, branching factor or lineage differ");
}

}  // namespace

std::string to_string(LeafFamily family) {
  switch (family) {
    case LeafFamily::Linear:
      return "linear";
    case LeafFamily::Cubic:
      return "cubic";
    case LeafFamily::RadixTable:
      return "radix";
  }
  return "?";
}

LeafFamily parse_leaf_family(const std::string& text) {
  if (text == "linear") return LeafFamily::Linear;
  if (text == "cubic") return LeafFamily::Cubic;
  if (text == "radix" || text == "radixtable") return LeafFamily::RadixTable;
  throw Error("invalid-config", "unknown leaf family '" + text + "'");
}

// ----- TrainingSet -----------------------------------------------------------

TrainingSet::TrainingSet(std::vector<Key> keys) : keys_(std::move(keys)) {
  ranks_.resize(keys_.size());
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    if (i > 0 && keys_[i] < keys_[i - 1]) throw Error("unsorted-keys");
    ranks_[i] = (i > 0 && keys_[i] == keys_[i - 1]) ? ranks_[i - 1] : i;
  }
}

std::uint64_t TrainingSet::rank_of(Key key) const noexcept {
  return static_cast<std::uint64_t>(std::lower_bound(keys_.begin(), keys_.end(), key) - keys_.begin());
}

TrainingSet TrainingSet::sketch(double fraction, std::size_t min_size) const {
  const auto target = std::max(min_size, static_cast<std::size_t>(fraction * static_cast<double>(size())));
  if (target >= size()) return *this;
  std::vector<Key> sample;
  sample.reserve(target);
  for (std::size_t i = 0; i < target; ++i) sample.push_back(keys_[i * size() / target]);
  return TrainingSet(std::move(sample));
}

// ----- Router ---------------------------------------------------------------

double Router::predict(Key key, std::uint64_t n) const noexcept {
  const Real top = static_cast<Real>(n);
  if (kind == RouterKind::Linear) {
    const Real r = static_cast<Real>(slope) * static_cast<Real>(key) + static_cast<Real>(intercept);
    return static_cast<double>(std::clamp<Real>(r, 0, top));
  }
  if (key < key_min) return 0.0;
  const std::uint64_t d = key - key_min;
  const std::uint64_t bucket = shift >= 64 ? 0 : d >> shift;
  const std::uint64_t buckets = std::uint64_t{1} << bits;
  if (bucket >= buckets) return static_cast<double>(n);
  const std::uint64_t low_mask = shift >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << shift) - 1);
  const Real frac = shift == 0 ? 0 : static_cast<Real>(d & low_mask) / std::ldexp(Real{1}, shift);
  const Real lo = static_cast<Real>(table[bucket]);
  const Real hi = static_cast<Real>(table[bucket + 1]);
  return static_cast<double>(std::min(top, lo + (hi - lo) * frac));
}

// ----- RmiModel -------------------------------------------------------------

std::size_t RmiModel::param_count() const noexcept { return family_params(family_, radix_leaf_bits_); }

void RmiModel::init_shape() {
  span_ = static_cast<double>(n_) / static_cast<double>(std::max<std::size_t>(leaves_.size(), 1));
  dirty_ = true;
}

void RmiModel::refresh() const {
  if (!dirty_) return;
  const auto eff = remonotonize(leaves_);
  eff_lo_.resize(eff.size());
  eff_hi_.resize(eff.size());
  std::uint64_t top = n_;
  for (std::size_t j = 0; j < eff.size(); ++j) {
    eff_lo_[j] = eff[j].first;
    eff_hi_[j] = eff[j].second;
    top = std::max<std::uint64_t>(top, static_cast<std::uint64_t>(eff[j].second) + 1);
  }
  n_eff_ = top;
  dirty_ = false;
}

std::uint64_t RmiModel::effective_count() const {
  refresh();
  return n_eff_;
}

std::pair<double, double> RmiModel::effective_interval(std::uint32_t index) const {
  refresh();
  return {eff_lo_.at(index), eff_hi_.at(index)};
}

std::pair<std::uint32_t, double> RmiModel::route(Key key) const noexcept {
  const double r1 = router_.predict(key, n_);
  const auto b = static_cast<std::uint32_t>(leaves_.size());
  auto j = static_cast<std::uint32_t>(std::min<Real>(static_cast<Real>(r1) * b / static_cast<Real>(n_), b - 1));
  double u = r1 - static_cast<double>(j) * span_;
  return {j, std::max(0.0, u)};
}

double RmiModel::raw_prediction(std::uint32_t index, double u) const noexcept {
  const auto& leaf = leaves_[index];
  const auto& p = leaf.params;
  const double s = leaf.anchor.scale, o = leaf.anchor.offset;
  switch (family_) {
    case LeafFamily::Linear:
      return p[0] + o + s * (p[1] * u);
    case LeafFamily::Cubic:
      return p[0] + o + s * (((p[3] * u + p[2]) * u + p[1]) * u);
    case LeafFamily::RadixTable: {
      const std::size_t k = std::size_t{1} << radix_leaf_bits_;
      const double x = std::clamp(u / span_, 0.0, 1.0) * static_cast<double>(k);
      const std::size_t b = std::min(k - 1, static_cast<std::size_t>(x));
      const double frac = x - static_cast<double>(b);
      const double interp = p[b] + (p[b + 1] - p[b]) * frac;
      return p[0] + o + s * (interp - p[0]);
    }
  }
  return 0.0;
}

double RmiModel::leaf_envelope(const LeafModel& leaf, double u) const noexcept {
  const auto index = static_cast<std::uint32_t>(&leaf - leaves_.data());
  const auto& p = leaf.params;
  double best = std::max(raw_prediction(index, 0.0), raw_prediction(index, u));
  if (family_ == LeafFamily::Cubic) {
    // Interior critical points of c1 + 2 c2 x + 3 c3 x^2 within (0, u).
    const double a = 3 * p[3], b = 2 * p[2], c = p[1];
    auto consider = [&](double x) {
      if (x > 0 && x < u) best = std::max(best, raw_prediction(index, x));
    };
    if (a == 0) {
      if (b != 0) consider(-c / b);
    } else {
      const double disc = b * b - 4 * a * c;
      if (disc >= 0) {
        const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
        if (q != 0) consider(c / q);
        consider(q / a);
      }
    }
  } else if (family_ == LeafFamily::RadixTable) {
    const std::size_t k = std::size_t{1} << radix_leaf_bits_;
    const double x = std::clamp(u / span_, 0.0, 1.0) * static_cast<double>(k);
    const std::size_t b = std::min(k - 1, static_cast<std::size_t>(x));
    for (std::size_t i = 0; i <= b; ++i) best = std::max(best, raw_prediction(index, span_ * i / k));
  }
  return best;
}

double RmiModel::predict_rank(Key key) const {
  refresh();
  const auto [j, u] = route(key);
  const double pred = leaf_envelope(leaves_[j], u);
  return std::clamp(pred, eff_lo_[j], eff_hi_[j]);
}

HashValue RmiModel::hash(Key key) const {
  const Real rank = predict_rank(key);
  const Real h = static_cast<Real>(h_);
  Real v = std::floor(rank * h / static_cast<Real>(n_eff_));
  if (v < 0) v = 0;
  if (v > h - 1) v = h - 1;
  return static_cast<HashValue>(static_cast<unsigned __int128>(v));
}

void RmiModel::set_leaf(std::uint32_t index, const LeafModel& leaf) {
  leaves_.at(index) = leaf;
  dirty_ = true;
}

void RmiModel::set_version(std::uint32_t version, std::uint32_t author) {
  version_ = version;
  author_ = author;
}

std::vector<std::uint32_t> RmiModel::changed_since(std::uint32_t since_version) const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t j = 0; j < leaves_.size(); ++j)
    if (leaves_[j].changed_at > since_version) out.push_back(j);
  return out;
}

std::uint64_t RmiModel::digest() const {
  const auto bytes = serialize_full(*this);
  return fmix64(fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

bool RmiModel::operator==(const RmiModel& o) const {
  return family_ == o.family_ && radix_leaf_bits_ == o.radix_leaf_bits_ && router_ == o.router_ &&
         leaves_ == o.leaves_ && n_ == o.n_ && h_ == o.h_ && version_ == o.version_ && author_ == o.author_ &&
         lineage_ == o.lineage_;
}

// ----- training --------------------------------------------------------------

namespace {

Router fit_router(const TrainingSet& train, const TrainConfig& config) {
  Router router;
  router.kind = config.router;
  const auto keys = train.keys();
  const std::size_t n = keys.size();
  if (config.router == RouterKind::Linear) {
    const auto fit = fit_linear(
        n, [&](std::size_t i) { return static_cast<Real>(keys[i]); },
        [&](std::size_t i) { return static_cast<Real>(train.rank(i)); });
    router.slope = static_cast<double>(fit.slope);
    router.intercept = static_cast<double>(fit.intercept);
    return router;
  }
  const unsigned bits = std::clamp(config.router_bits, 1u, 24u);
  router.bits = static_cast<std::uint8_t>(bits);
  router.key_min = keys.front();
  const std::uint64_t range = keys.back() - keys.front();
  const unsigned width = range == 0 ? 0 : 64 - static_cast<unsigned>(std::countl_zero(range));
  router.shift = static_cast<std::uint8_t>(width > bits ? width - bits : 0);
  const std::size_t buckets = std::size_t{1} << bits;
  router.table.assign(buckets + 1, 0);
  std::vector<std::uint64_t> counts(buckets, 0);
  for (Key k : keys) ++counts[(k - router.key_min) >> router.shift];
  for (std::size_t b = 0; b < buckets; ++b) router.table[b + 1] = router.table[b] + counts[b];
  return router;
}

// Least squares over a basis evaluated at normalized v in [0, 1].
void fit_leaf(LeafModel& leaf, LeafFamily family, unsigned radix_bits, double span, std::span<const double> u,
              std::span<const std::uint64_t> y) {
  const std::size_t n = u.size();
  leaf.params.fill(0.0);
  const std::size_t count = family_params(family, radix_bits);
  if (n == 0) {
    for (std::size_t i = 0; i < (family == LeafFamily::RadixTable ? count : 1); ++i)
      leaf.params[i] = static_cast<double>(leaf.rank_lo);
    return;
  }
  const auto lin = fit_linear(
      n, [&](std::size_t i) { return static_cast<Real>(u[i]); },
      [&](std::size_t i) { return static_cast<Real>(y[i]); });
  switch (family) {
    case LeafFamily::Linear:
      leaf.params[0] = static_cast<double>(lin.intercept);
      leaf.params[1] = static_cast<double>(lin.slope);
      return;
    case LeafFamily::Cubic: {
      const Real sp = span > 0 ? span : 1.0;
      for (std::size_t degree = std::min<std::size_t>(3, n - 1) + 1; degree >= 1; --degree) {
        std::vector<Real> a(degree * degree, 0), b(degree, 0);
        for (std::size_t i = 0; i < n; ++i) {
          const Real v = u[i] / sp;
          Real pw[4] = {1, v, v * v, v * v * v};
          for (std::size_t r = 0; r < degree; ++r) {
            b[r] += pw[r] * static_cast<Real>(y[i]);
            for (std::size_t c = 0; c < degree; ++c) a[r * degree + c] += pw[r] * pw[c];
          }
        }
        if (solve_dense(a, b, degree)) {
          Real scale = 1;
          for (std::size_t k = 0; k < degree; ++k) {
            leaf.params[k] = static_cast<double>(b[k] / scale);
            scale *= sp;
          }
          return;
        }
      }
      leaf.params[0] = static_cast<double>(lin.intercept);
      return;
    }
    case LeafFamily::RadixTable: {
      // Tent basis on knots v_k = k / K, ridge-regularized toward the linear fit
      // so knots without nearby data stay well-defined.
      const std::size_t k = count - 1;
      const Real sp = span > 0 ? span : 1.0;
      std::vector<Real> a(count * count, 0), b(count, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const Real x = std::clamp<Real>(u[i] / sp, 0, 1) * k;
        const std::size_t lo = std::min(k - 1, static_cast<std::size_t>(x));
        const Real w1 = x - lo, w0 = 1 - w1;
        const Real yi = static_cast<Real>(y[i]);
        a[lo * count + lo] += w0 * w0;
        a[lo * count + lo + 1] += w0 * w1;
        a[(lo + 1) * count + lo] += w0 * w1;
        a[(lo + 1) * count + lo + 1] += w1 * w1;
        b[lo] += w0 * yi;
        b[lo + 1] += w1 * yi;
      }
      const Real lambda = 1e-6L * n + 1e-9L;
      for (std::size_t i = 0; i < count; ++i) {
        a[i * count + i] += lambda;
        b[i] += lambda * (lin.intercept + lin.slope * (sp * i / k));
      }
      if (!solve_dense(a, b, count)) {
        for (std::size_t i = 0; i < count; ++i) b[i] = lin.intercept + lin.slope * (sp * i / k);
      }
      for (std::size_t i = 0; i < count; ++i) leaf.params[i] = static_cast<double>(b[i]);
      return;
    }
  }
}

}  // namespace

RmiModel train_rmi(const TrainingSet& train, const TrainConfig& config) {
  if (train.empty()) throw Error("empty-dataset");
  if (config.branching == 0) throw Error("invalid-config", "branching factor must be >= 1");
  if (config.hash_space == 0) throw Error("invalid-config", "hash space must be >= 1");

  RmiModel m;
  m.family_ = config.family;
  m.radix_leaf_bits_ = std::clamp(config.radix_leaf_bits, 1u, kMaxRadixLeafBits);
  m.n_ = train.size();
  m.h_ = config.hash_space;
  m.version_ = 1;
  m.author_ = 0;
  m.router_ = fit_router(train, config);
  m.leaves_.assign(config.branching, LeafModel{});
  m.init_shape();

  const auto keys = train.keys();
  const std::size_t n = keys.size();
  std::vector<double> u(n);
  std::vector<std::uint32_t> leaf_of(n);
  std::vector<std::uint64_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [j, ui] = m.route(keys[i]);
    leaf_of[i] = j;
    u[i] = ui;
    y[i] = train.rank(i);
  }

  // Routing is monotone, so each leaf owns a contiguous run of keys.
  std::size_t begin = 0;
  std::uint64_t boundary = 0;
  for (std::uint32_t j = 0; j < config.branching; ++j) {
    std::size_t end = begin;
    while (end < n && leaf_of[end] == j) ++end;
    auto& leaf = m.leaves_[j];
    if (end > begin) {
      leaf.rank_lo = y[begin];
      leaf.rank_hi = y[end - 1];
      boundary = leaf.rank_hi;
    } else {
      leaf.rank_lo = leaf.rank_hi = boundary;
    }
    fit_leaf(leaf, m.family_, m.radix_leaf_bits_, m.span_, std::span(u).subspan(begin, end - begin),
             std::span(y).subspan(begin, end - begin));
    leaf.changed_at = 1;
    begin = end;
  }
  m.lineage_ = lineage_of(m.router_, m.n_, config.branching, m.family_, m.h_, m.radix_leaf_bits_);
  m.refresh();
  return m;
}

ModelStats error_stats(const RmiModel& model, const TrainingSet& eval) {
  if (eval.empty()) throw Error("empty-dataset");
  ModelStats stats;
  double sum = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const double err = std::fabs(model.predict_rank(eval.keys()[i]) - static_cast<double>(eval.rank(i)));
    const double l = std::log2(1.0 + err);
    stats.max_log2_error = std::max(stats.max_log2_error, l);
    sum += l;
  }
  stats.avg_log2_error = std::min(stats.max_log2_error, sum / static_cast<double>(eval.size()));
  stats.size_bytes = serialize_full(model).size();
  return stats;
}

ScoutResult model_scout(const TrainingSet& sketch, const ScoutConfig& config) {
  if (sketch.empty()) throw Error("empty-dataset");
  auto evaluate = [&](LeafFamily family, std::uint32_t branching) {
    TrainConfig tc = config.base;
    tc.family = family;
    tc.branching = branching;
    const auto model = train_rmi(sketch, tc);
    std::vector<double> errs(sketch.size());
    for (std::size_t i = 0; i < sketch.size(); ++i)
      errs[i] = std::fabs(model.predict_rank(sketch.keys()[i]) - static_cast<double>(sketch.rank(i)));
    const std::size_t idx = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(errs.size()))) - 1;
    std::nth_element(errs.begin(), errs.begin() + static_cast<std::ptrdiff_t>(idx), errs.end());
    ScoutResult r;
    r.family = family;
    r.branching = branching;
    r.p99_error = errs[idx];
    r.size_bytes = serialize_full(model).size();
    r.objective = r.p99_error * (1.0 + static_cast<double>(r.size_bytes) / static_cast<double>(config.budget_bytes));
    return r;
  };
  auto better = [](const ScoutResult& a, const ScoutResult& b) {
    if (a.objective != b.objective) return a.objective < b.objective;
    return a.size_bytes < b.size_bytes;
  };

  std::optional<ScoutResult> best;
  for (LeafFamily family : {LeafFamily::Linear, LeafFamily::Cubic, LeafFamily::RadixTable}) {
    std::uint32_t b = std::max<std::uint32_t>(1, config.start_branching);
    ScoutResult current = evaluate(family, b);
    while (b <= config.max_branching / 2) {
      ScoutResult next = evaluate(family, b * 2);
      if (!(next.objective < current.objective)) break;
      current = next;
      b *= 2;
    }
    if (!best || better(current, *best)) best = current;
  }
  return *best;
}

// ----- online updates ----------------------------------------------------------

std::vector<double> leaf_gradient(const RmiModel& model, std::uint32_t index, double u, double target) {
  const auto& leaf = model.leaf(index);
  const double s = leaf.anchor.scale;
  const double err = model.raw_prediction(index, u) - target;
  const std::size_t count = model.param_count();
  std::vector<double> g(count, 0.0);
  switch (model.family()) {
    case LeafFamily::Linear:
      g[0] = 2 * err;
      g[1] = 2 * err * s * u;
      break;
    case LeafFamily::Cubic:
      g[0] = 2 * err;
      g[1] = 2 * err * s * u;
      g[2] = 2 * err * s * u * u;
      g[3] = 2 * err * s * u * u * u;
      break;
    case LeafFamily::RadixTable: {
      const std::size_t k = count - 1;
      const double x = std::clamp(u / model.leaf_span(), 0.0, 1.0) * static_cast<double>(k);
      const std::size_t b = std::min(k - 1, static_cast<std::size_t>(x));
      const double w1 = x - static_cast<double>(b), w0 = 1 - w1;
      // pred = p0 + o + s * (w0 p_b + w1 p_{b+1} - p0)
      g[0] += 2 * err * (1 - s);
      g[b] += 2 * err * s * w0;
      g[b + 1] += 2 * err * s * w1;
      break;
    }
  }
  return g;
}

void leaf_update(RmiModel& model, Key key, double target_rank, double learning_rate) {
  const auto [j, u] = model.route(key);
  const auto g = leaf_gradient(model, j, u, target_rank);
  auto& leaf = model.leaves_[j];
  // Step in normalized-feature coordinates (v = u / span) so one learning
  // rate is stable for every coefficient.
  const double span = model.leaf_span() > 0 ? model.leaf_span() : 1.0;
  double feature_scale = 1.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    leaf.params[k] -= learning_rate * g[k] / (feature_scale * feature_scale);
    if (model.family() != LeafFamily::RadixTable) feature_scale *= span;
  }
  if (model.family() == LeafFamily::Linear) leaf.params[1] = std::max(0.0, leaf.params[1]);
  const double t = std::max(0.0, target_rank);
  if (t < static_cast<double>(leaf.rank_lo)) leaf.rank_lo = static_cast<std::uint64_t>(std::floor(t));
  if (t > static_cast<double>(leaf.rank_hi)) leaf.rank_hi = static_cast<std::uint64_t>(std::ceil(t));
  leaf.changed_at = model.version_ + 1;
  leaf.author = 0;
  model.invalidate();
}

void adjust_anchor(RmiModel& model, std::uint32_t index, const AnchorObservation& obs, double eta) {
  auto& leaf = model.leaves_.at(index);
  leaf.anchor.offset += eta * (obs.observed_median - obs.predicted_median);
  const double lo = static_cast<double>(leaf.rank_lo), hi = static_cast<double>(leaf.rank_hi);
  if (hi > lo) {
    const double q = (obs.predicted_p95 - lo) / (hi - lo);
    if (q < 0.95)
      leaf.anchor.scale *= 1.04;
    else if (q > 1.05)
      leaf.anchor.scale *= 0.96;
  }
  leaf.changed_at = model.version_ + 1;
  leaf.author = 0;
  model.invalidate();
}

// ----- wire format -------------------------------------------------------------

std::vector<std::uint8_t> serialize_changed_segments(const RmiModel& model, std::uint32_t since_version) {
  const auto changed = model.changed_since(since_version);
  Writer w;
  write_header(w, model, kBlobSegments, static_cast<std::uint32_t>(changed.size()));
  for (auto j : changed) write_leaf(w, model, j);
  return w.take();
}

std::vector<std::uint8_t> serialize_full(const RmiModel& model) {
  Writer w;
  write_header(w, model, kBlobFull, model.branching());
  const auto& r = model.router();
  w.u8(static_cast<std::uint8_t>(model.radix_leaf_bits()));
  w.u8(static_cast<std::uint8_t>(r.kind));
  if (r.kind == RouterKind::Linear) {
    w.f64(r.slope);
    w.f64(r.intercept);
  } else {
    w.u64(r.key_min);
    w.u8(r.shift);
    w.u8(r.bits);
    for (auto v : r.table) w.u64(v);
  }
  for (std::uint32_t j = 0; j < model.branching(); ++j) write_leaf(w, model, j);
  for (const auto& leaf : model.leaves()) {
    w.u32(leaf.changed_at);
    w.u32(leaf.author);
  }
  return w.take();
}

SegmentBlob decode_segments(std::span<const std::uint8_t> blob) {
  Reader r(blob);
  const Header h = read_header(r);
  if (h.kind != kBlobSegments) throw Error("corrupt-blob", "not a segment blob");
  SegmentBlob out;
  out.version = h.version;
  out.branching = h.branching;
  out.count = h.count;
  out.hash_space = h.hash_space;
  out.family = h.family;
  out.author = h.author;
  out.lineage = h.lineage;
  // The radix leaf width is not in the segment header; infer it from the
  // record size.
  std::size_t count = family_params(h.family, 1);
  if (h.family == LeafFamily::RadixTable && h.records > 0) {
    const std::size_t payload = blob.size() - kSegmentHeaderBytes;
    const std::size_t per = payload / h.records;
    count = (per - 4 - 16) / 4;
  }
  if (count > kMaxLeafParams) throw Error("corrupt-blob", "too many leaf parameters");
  out.leaves.reserve(h.records);
  for (std::uint32_t i = 0; i < h.records; ++i) {
    out.leaves.push_back(read_leaf(r, count));
    if (out.leaves.back().index >= h.branching) throw Error("corrupt-blob", "leaf index out of range");
  }
  if (!r.done()) throw Error("corrupt-blob", "trailing bytes");
  return out;
}

RmiModel deserialize_full(std::span<const std::uint8_t> blob) {
  Reader r(blob);
  const Header h = read_header(r);
  if (h.kind != kBlobFull || h.records != h.branching || h.branching == 0)
    throw Error("corrupt-blob", "not a full model blob");
  RmiModel m;
  m.family_ = h.family;
  m.radix_leaf_bits_ = r.u8();
  if (m.radix_leaf_bits_ < 1 || m.radix_leaf_bits_ > kMaxRadixLeafBits) throw Error("corrupt-blob", "radix bits");
  m.router_.kind = static_cast<RouterKind>(r.u8());
  if (m.router_.kind == RouterKind::Linear) {
    m.router_.slope = r.f64();
    m.router_.intercept = r.f64();
  } else if (m.router_.kind == RouterKind::Radix) {
    m.router_.key_min = r.u64();
    m.router_.shift = r.u8();
    m.router_.bits = r.u8();
    if (m.router_.bits == 0 || m.router_.bits > 24) throw Error("corrupt-blob", "router bits");
    m.router_.table.resize((std::size_t{1} << m.router_.bits) + 1);
    for (auto& v : m.router_.table) v = r.u64();
  } else {
    throw Error("corrupt-blob", "unknown router");
  }
  m.n_ = h.count;
  m.h_ = h.hash_space;
  m.version_ = h.version;
  m.author_ = h.author;
  m.lineage_ = h.lineage;
  const std::size_t count = family_params(m.family_, m.radix_leaf_bits_);
  m.leaves_.resize(h.branching);
  for (std::uint32_t i = 0; i < h.branching; ++i) {
    const auto rec = read_leaf(r, count);
    if (rec.index != i) throw Error("corrupt-blob", "leaves out of order");
    m.leaves_[i] = leaf_from_record(rec, count);
  }
  for (auto& leaf : m.leaves_) {
    leaf.changed_at = r.u32();
    leaf.author = r.u32();
  }
  if (!r.done()) throw Error("corrupt-blob", "trailing bytes");
  m.init_shape();
  m.refresh();
  return m;
}

ApplyResult apply_segments(RmiModel& model, std::span<const std::uint8_t> blob) {
  const auto seg = decode_segments(blob);
  require_compatible(model, seg.family, seg.branching, seg.lineage);
  if (seg.version <= model.version_) return ApplyResult::Stale;
  const std::size_t count = model.param_count();
  for (const auto& rec : seg.leaves) {
    auto leaf = leaf_from_record(rec, count);
    leaf.changed_at = seg.version;
    leaf.author = seg.author;
    model.leaves_[rec.index] = leaf;
  }
  model.version_ = seg.version;
  model.author_ = seg.author;
  model.invalidate();
  model.refresh();
  return ApplyResult::Applied;
}

RmiModel merge_models(const RmiModel& a, const RmiModel& b) {
  require_compatible(a, b.family(), b.branching(), b.lineage());
  RmiModel out = a;
  for (std::size_t j = 0; j < out.leaves_.size(); ++j) {
    const auto& la = a.leaves_[j];
    const auto& lb = b.leaves_[j];
    if (lb.changed_at > la.changed_at || (lb.changed_at == la.changed_at && lb.author < la.author))
      out.leaves_[j] = lb;
  }
  if (b.version_ > a.version_ || (b.version_ == a.version_ && b.author_ < a.author_)) {
    out.version_ = b.version_;
    out.author_ = b.author_;
  }
  out.invalidate();
  out.refresh();
  return out;
}

AggregateResult aggregate_segments(const RmiModel& base, std::span<const SegmentBlob> blobs,
                                   std::uint32_t new_version, std::uint32_t author) {
  AggregateResult result{base, 0};
  auto& m = result.model;
  const std::size_t count = m.param_count();
  struct Acc {
    std::array<double, kMaxLeafParams> sum{};
    std::uint64_t lo = std::numeric_limits<std::uint64_t>::max();
    std::uint64_t hi = 0;
    std::size_t n = 0;
  };
  std::vector<Acc> acc(m.branching());
  for (const auto& blob : blobs) {
    if (blob.family != m.family() || blob.branching != m.branching() || blob.lineage != m.lineage()) {
      ++result.dropped;
      continue;
    }
    for (const auto& rec : blob.leaves) {
      auto& a = acc[rec.index];
      for (std::size_t i = 0; i < count; ++i) a.sum[i] += rec.params[i];
      a.lo = std::min(a.lo, rec.rank_lo);
      a.hi = std::max(a.hi, rec.rank_hi);
      ++a.n;
    }
  }
  for (std::size_t j = 0; j < acc.size(); ++j) {
    if (acc[j].n == 0) continue;
    LeafModel leaf;
    for (std::size_t i = 0; i < count; ++i) leaf.params[i] = acc[j].sum[i] / static_cast<double>(acc[j].n);
    if (m.family() == LeafFamily::Linear) leaf.params[1] = std::max(0.0, leaf.params[1]);
    leaf.rank_lo = acc[j].lo;
    leaf.rank_hi = std::max(acc[j].lo, acc[j].hi);
    leaf.changed_at = new_version;
    leaf.author = author;
    m.leaves_[j] = leaf;
  }
  m.version_ = new_version;
  m.author_ = author;
  m.invalidate();
  m.refresh();
  return result;
}

std::vector<std::pair<double, double>> remonotonize(std::span<const LeafModel> leaves) {
  std::vector<std::pair<double, double>> eff(leaves.size());
  for (std::size_t j = 0; j < leaves.size(); ++j) {
    double lo = static_cast<double>(leaves[j].rank_lo);
    double hi = std::max(lo, static_cast<double>(leaves[j].rank_hi));
    if (j > 0) {
      auto& prev = eff[j - 1];
      if (lo < prev.second) {
        const double mid = std::floor((prev.second + lo) / 2);
        prev.second = std::max(prev.first, mid);
        lo = prev.second;
        hi = std::max(hi, lo);
      }
    }
    eff[j] = {lo, hi};
  }
  return eff;
}

}  // namespace lead

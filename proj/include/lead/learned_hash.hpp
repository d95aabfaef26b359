#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lead/common.hpp"

namespace lead {

enum class LeafFamily : std::uint8_t { Linear = 1, Cubic = 2, RadixTable = 3 };
enum class RouterKind : std::uint8_t { Linear = 1, Radix = 2 };

std::string to_string(LeafFamily family);
LeafFamily parse_leaf_family(const std::string& text);

/// Sorted keys with their training targets: y(i) is the index of the first
/// occurrence of keys[i].
class TrainingSet {
 public:
  TrainingSet() = default;
  /// Throws "unsorted-keys" if keys decrease anywhere.
  explicit TrainingSet(std::vector<Key> keys);

  std::span<const Key> keys() const noexcept { return keys_; }
  std::size_t size() const noexcept { return keys_.size(); }
  bool empty() const noexcept { return keys_.empty(); }
  std::uint64_t rank(std::size_t i) const noexcept { return ranks_[i]; }
  /// Brute-force rank of an arbitrary key: number of distinct-position keys
  /// strictly smaller, i.e. first index of key if present.
  std::uint64_t rank_of(Key key) const noexcept;

  /// Uniform sample of max(min_size, fraction * N) keys (or all of them).
  TrainingSet sketch(double fraction = 0.01, std::size_t min_size = 1000) const;

 private:
  std::vector<Key> keys_;
  std::vector<std::uint64_t> ranks_;
};

/// 〈offset, scale〉 applied to a leaf's raw prediction. The scale stretches the
/// prediction about its value at the leaf start (u = 0), the offset shifts it.
struct Anchor {
  double offset = 0.0;
  double scale = 1.0;
  bool operator==(const Anchor&) const = default;
};

inline constexpr std::size_t kMaxLeafParams = 9;  // radix leaves with 3 prefix bits
inline constexpr unsigned kMaxRadixLeafBits = 3;

/// One stage-2 model. Input is the router prediction relative to the leaf's
/// start, u in [0, N/B), so coefficients are in rank units.
struct LeafModel {
  /// Linear: {intercept, slope}. Cubic: {c0, c1, c2, c3}.
  /// RadixTable: knot offsets at v = k / 2^bits for k = 0..2^bits.
  std::array<double, kMaxLeafParams> params{};
  Anchor anchor;
  std::uint64_t rank_lo = 0;
  std::uint64_t rank_hi = 0;
  /// Model version at which the parameters last changed, and the peer that
  /// produced that change. Used to merge concurrently published models.
  std::uint32_t changed_at = 0;
  std::uint32_t author = 0;

  bool operator==(const LeafModel&) const = default;
};

struct TrainConfig {
  LeafFamily family = LeafFamily::Linear;
  std::uint32_t branching = 64;
  /// H, the number of hash values; defaults to the full 2^64 ring.
  unsigned __int128 hash_space = RingSpace{}.size();
  RouterKind router = RouterKind::Radix;
  unsigned router_bits = 12;
  unsigned radix_leaf_bits = 1;
};

/// Stage-0 model. Monotone non-decreasing by construction.
struct Router {
  RouterKind kind = RouterKind::Linear;
  double slope = 0.0;
  double intercept = 0.0;
  Key key_min = 0;
  std::uint8_t shift = 0;
  std::uint8_t bits = 0;
  std::vector<std::uint64_t> table;  // cumulative counts, 2^bits + 1 entries

  /// Predicted rank in [0, n].
  double predict(Key key, std::uint64_t n) const noexcept;
  bool operator==(const Router&) const = default;
};

struct ModelStats {
  double max_log2_error = 0.0;
  double avg_log2_error = 0.0;
  std::size_t size_bytes = 0;
};

struct AnchorObservation {
  double predicted_median = 0.0;
  double observed_median = 0.0;
  /// Unclamped prediction of the 95% key quantile.
  double predicted_p95 = 0.0;
};

struct SegmentBlob;
struct AggregateResult;
enum class ApplyResult { Applied, Stale };

/// Two-stage recursive model realizing the order-preserving learned hash.
class RmiModel {
 public:
  RmiModel() = default;

  LeafFamily family() const noexcept { return family_; }
  std::uint32_t branching() const noexcept { return static_cast<std::uint32_t>(leaves_.size()); }
  /// Training count N the router was fit on.
  std::uint64_t base_count() const noexcept { return n_; }
  /// Effective N used by the scale factor: grows when updated leaves claim
  /// ranks beyond the trained count.
  std::uint64_t effective_count() const;
  unsigned __int128 hash_space() const noexcept { return h_; }
  std::uint32_t version() const noexcept { return version_; }
  std::uint32_t author() const noexcept { return author_; }
  /// Identifies the router/shape a model was trained with. Segments and
  /// merges only make sense within one lineage.
  std::uint64_t lineage() const noexcept { return lineage_; }
  unsigned radix_leaf_bits() const noexcept { return radix_leaf_bits_; }
  const Router& router() const noexcept { return router_; }
  std::span<const LeafModel> leaves() const noexcept { return leaves_; }
  const LeafModel& leaf(std::uint32_t index) const { return leaves_.at(index); }
  std::size_t param_count() const noexcept;

  /// Effective (re-monotonized) rank interval of a leaf.
  std::pair<double, double> effective_interval(std::uint32_t index) const;

  /// Stage-0 routing: leaf index and the leaf-relative input u.
  std::pair<std::uint32_t, double> route(Key key) const noexcept;
  /// Leaf output with the anchor applied, before clamping (no monotone envelope).
  double raw_prediction(std::uint32_t leaf, double u) const noexcept;
  /// Monotone, anchored, clamped rank prediction.
  double predict_rank(Key key) const;
  /// LearnedHASH: floor(clamped_rank * H / N), in [0, H).
  HashValue hash(Key key) const;

  /// Width of one leaf's input span, N / B.
  double leaf_span() const noexcept { return span_; }

  void set_leaf(std::uint32_t index, const LeafModel& leaf);
  void set_version(std::uint32_t version, std::uint32_t author);
  /// Leaves whose parameters changed after since_version.
  std::vector<std::uint32_t> changed_since(std::uint32_t since_version) const;

  /// Stable 64-bit digest of the full serialization.
  std::uint64_t digest() const;

  bool operator==(const RmiModel& other) const;

 private:
  friend RmiModel train_rmi(const TrainingSet&, const TrainConfig&);
  friend RmiModel deserialize_full(std::span<const std::uint8_t>);
  friend RmiModel merge_models(const RmiModel&, const RmiModel&);
  friend AggregateResult aggregate_segments(const RmiModel&, std::span<const SegmentBlob>, std::uint32_t,
                                            std::uint32_t);
  friend ApplyResult apply_segments(RmiModel&, std::span<const std::uint8_t>);
  friend void leaf_update(RmiModel&, Key, double, double);
  friend void adjust_anchor(RmiModel&, std::uint32_t, const AnchorObservation&, double);

  void init_shape();
  void refresh() const;
  void invalidate() noexcept { dirty_ = true; }
  /// Monotone envelope of the anchored leaf output over [0, u].
  double leaf_envelope(const LeafModel& leaf, double u) const noexcept;

  LeafFamily family_ = LeafFamily::Linear;
  unsigned radix_leaf_bits_ = 1;
  Router router_;
  std::vector<LeafModel> leaves_;
  std::uint64_t n_ = 0;
  unsigned __int128 h_ = 0;
  std::uint32_t version_ = 0;
  std::uint32_t author_ = 0;
  std::uint64_t lineage_ = 0;

  double span_ = 1.0;

  // Derived lazily from the leaves. A model shared between peers is always
  // refreshed before it is shared, so const readers never race on these.
  mutable bool dirty_ = true;
  mutable std::uint64_t n_eff_ = 0;
  mutable std::vector<double> eff_lo_;
  mutable std::vector<double> eff_hi_;
};

/// Trains stage 0 and every leaf by closed-form least squares. Version 1.
/// Throws "empty-dataset" when the training set is empty.
RmiModel train_rmi(const TrainingSet& train, const TrainConfig& config);

struct ScoutResult {
  LeafFamily family = LeafFamily::Linear;
  std::uint32_t branching = 64;
  double p99_error = 0.0;
  std::size_t size_bytes = 0;
  double objective = 0.0;
};

struct ScoutConfig {
  std::size_t budget_bytes = 16u << 20;
  std::uint32_t start_branching = 64;
  std::uint32_t max_branching = 1u << 16;
  TrainConfig base;  // router and hash-space settings shared by candidates
};

/// Mountain-climbing model selection over leaf families and the B ladder.
ScoutResult model_scout(const TrainingSet& sketch, const ScoutConfig& config = {});

/// Gradient of (prediction - target)^2 with respect to the leaf parameters,
/// prediction being the anchored raw leaf output.
std::vector<double> leaf_gradient(const RmiModel& model, std::uint32_t leaf, double u, double target);

/// One SGD step (normalized-feature coordinates) toward target_rank for the
/// leaf that key routes to; widens that leaf's rank interval if needed.
void leaf_update(RmiModel& model, Key key, double target_rank, double learning_rate);

/// Anchor controller: offset += eta * (observed - predicted median); scale is
/// multiplied by 1.04, 1.0 or 0.96 to pull the predicted p95 toward rank_hi.
void adjust_anchor(RmiModel& model, std::uint32_t leaf, const AnchorObservation& obs, double eta = 0.5);

/// Throws "empty-dataset" on an empty evaluation set.
ModelStats error_stats(const RmiModel& model, const TrainingSet& eval);

// ---------------------------------------------------------------------------
// Wire format (little-endian). Fixed header: "LEAD", u32 version, u32 B,
// u64 N, u64 H (0 encodes 2^64), u8 family tag. Then u32 author, u64 lineage,
// u8 blob kind (0 segments, 1 full), u32 leaf-record count. Each leaf record:
// u32 index, f32 params (anchor folded in), u64 rank_lo, u64 rank_hi.
// Full blobs additionally carry the router after the header and a per-leaf
// (u32 changed_at, u32 author) stamp table after the records.

inline constexpr std::size_t kSegmentHeaderBytes = 4 + 4 + 4 + 8 + 8 + 1 + 4 + 8 + 1 + 4;

struct LeafRecord {
  std::uint32_t index = 0;
  std::array<float, kMaxLeafParams> params{};
  std::uint64_t rank_lo = 0;
  std::uint64_t rank_hi = 0;
};

struct SegmentBlob {
  std::uint32_t version = 0;
  std::uint32_t branching = 0;
  std::uint64_t count = 0;
  unsigned __int128 hash_space = 0;
  LeafFamily family = LeafFamily::Linear;
  std::uint32_t author = 0;
  std::uint64_t lineage = 0;
  std::vector<LeafRecord> leaves;
};

std::vector<std::uint8_t> serialize_changed_segments(const RmiModel& model, std::uint32_t since_version);
std::vector<std::uint8_t> serialize_full(const RmiModel& model);
/// Throws "corrupt-blob" on malformed input.
SegmentBlob decode_segments(std::span<const std::uint8_t> blob);
RmiModel deserialize_full(std::span<const std::uint8_t> blob);

/// Merges leaves by index; adopts the blob's version only if strictly greater.
/// Throws "incompatible-model" on family, branching or lineage mismatch.
ApplyResult apply_segments(RmiModel& model, std::span<const std::uint8_t> blob);

/// Per-leaf last-writer-wins merge of two models of the same lineage: the
/// higher (changed_at, -author) leaf survives; version becomes the max.
/// Commutative, associative and idempotent. Throws "incompatible-model".
RmiModel merge_models(const RmiModel& a, const RmiModel& b);

/// Federated averaging of leaf segments onto a base model; leaves absent from
/// every blob keep the base values. Stamps averaged leaves with
/// (new_version, author). Incompatible blobs are skipped and counted.
struct AggregateResult {
  RmiModel model;
  std::size_t dropped = 0;
};
AggregateResult aggregate_segments(const RmiModel& base, std::span<const SegmentBlob> blobs,
                                   std::uint32_t new_version, std::uint32_t author);

/// Orders leaf intervals: overlapping neighbours are split at their midpoint.
/// Returns effective (lo, hi) per leaf; exposed for testing.
std::vector<std::pair<double, double>> remonotonize(std::span<const LeafModel> leaves);

}  // namespace lead

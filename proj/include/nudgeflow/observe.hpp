#pragma once

// Coarse observation operator, observation streams (OBS1 files and an
// in-process bounded queue) and the nudging term built from them.

#include <bit>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "nudgeflow/assembly.hpp"

namespace nudgeflow {

static_assert(std::endian::native == std::endian::little, "OBS1 I/O assumes a little-endian host");

enum class ObservationKind : std::uint8_t { CoarseP1Nodal = 0, CellAverage = 1 };

inline const char* to_string(ObservationKind k) {
  return k == ObservationKind::CoarseP1Nodal ? "coarse-p1-nodal" : "cell-average";
}

/// Structured grid of spacing ~h_coarse over the mesh bounding box. Nodal
/// kind observes point values at grid nodes, cell-average kind observes the
/// mean over each grid cell. Values are component-major.
class ObservationOperator {
 public:
  ObservationOperator(std::shared_ptr<const TaylorHoodSpace> space, double h_coarse,
                      ObservationKind kind = ObservationKind::CoarseP1Nodal)
      : space_(std::move(space)), h_(h_coarse), kind_(kind) {
    if (!space_) throw InvalidArgument("observation operator: null space");
    if (!(h_coarse > 0.0) || !std::isfinite(h_coarse)) throw InvalidArgument("observation spacing must be positive");
    box_ = space_->mesh().bounding_box();
    nx_ = std::max(1, static_cast<int>(std::lround(box_.width() / h_coarse)));
    ny_ = std::max(1, static_cast<int>(std::lround(box_.height() / h_coarse)));
    coarser_than_mesh_ = h_coarse >= space_->mesh().max_edge_length() / std::sqrt(2.0) * (1.0 - 1e-12);
    if (kind_ == ObservationKind::CoarseP1Nodal)
      build_nodal();
    else
      build_cell_average();
    restrict_t_ = SparseMatrix(restrict_.transpose());
  }

  const TaylorHoodSpace& space() const { return *space_; }
  std::shared_ptr<const TaylorHoodSpace> space_ptr() const { return space_; }
  double h_coarse() const { return h_; }
  ObservationKind kind() const { return kind_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  /// False when the grid is finer than the mesh (allowed, but unusual).
  bool coarser_than_mesh() const { return coarser_than_mesh_; }

  /// Coarse sites per component (grid nodes or cells).
  Eigen::Index sites() const { return restrict_.rows() / 2; }
  Eigen::Index values_per_frame() const { return restrict_.rows(); }

  /// Fine velocity coefficients -> coarse values.
  const SparseMatrix& restriction() const { return restrict_; }
  /// Coarse values -> fine velocity coefficients.
  const SparseMatrix& prolongation() const { return prolong_; }

  Vector apply(const Vector& u) const {
    if (u.size() != space_->n_u()) throw DimensionError("observation apply: velocity has wrong size");
    return restrict_ * u;
  }

  Vector prolong(const Vector& values) const {
    if (values.size() != values_per_frame()) throw DimensionError("observation prolong: frame has wrong size");
    return prolong_ * values;
  }

  /// Fine-space representation of I_h(u).
  Vector interpolate(const Vector& u) const { return prolong_ * (restrict_ * u); }

  Point site_point(Eigen::Index k) const {
    if (kind_ == ObservationKind::CoarseP1Nodal)
      return {box_.x0 + box_.width() * (k % (nx_ + 1)) / nx_, box_.y0 + box_.height() * (k / (nx_ + 1)) / ny_};
    return {box_.x0 + box_.width() * ((k % nx_) + 0.5) / nx_, box_.y0 + box_.height() * ((k / nx_) + 0.5) / ny_};
  }

 private:
  // local cell coordinates of x; clamps to the grid
  void cell_of(Point x, int& i, int& j, double& s, double& t) const {
    double fx = (x.x - box_.x0) / box_.width() * nx_, fy = (x.y - box_.y0) / box_.height() * ny_;
    i = std::clamp(static_cast<int>(std::floor(fx)), 0, nx_ - 1);
    j = std::clamp(static_cast<int>(std::floor(fy)), 0, ny_ - 1);
    s = std::clamp(fx - i, 0.0, 1.0);
    t = std::clamp(fy - j, 0.0, 1.0);
  }

  void build_nodal() {
    const auto& sp = *space_;
    const Eigen::Index nc = static_cast<Eigen::Index>(nx_ + 1) * (ny_ + 1);
    TripletBuilder r(2 * nc, sp.n_u());
    const auto& verts = sp.mesh().vertices();
    for (Eigen::Index k = 0; k < nc; ++k) {
      Point x = site_point(k);
      auto hit = sp.locator().locate(x, 1e-9);
      if (hit) {
        auto nodes = sp.element_nodes(hit->triangle);
        auto phi = P2Basis::values(hit->bary[1], hit->bary[2]);
        for (int c = 0; c < 2; ++c)
          for (int i = 0; i < 6; ++i)
            if (phi[i] != 0.0) r.add(k + c * nc, sp.velocity_dof(nodes[i], c), phi[i]);
      } else {
        // outside the domain (holes, non-rectangular outlines): nearest vertex
        std::size_t best = 0;
        double bd = 1e300;
        for (std::size_t v = 0; v < verts.size(); ++v) {
          double d = norm(verts[v] - x);
          if (d < bd) bd = d, best = v;
        }
        for (int c = 0; c < 2; ++c) r.add(k + c * nc, sp.velocity_dof(best, c), 1.0);
      }
    }
    restrict_ = r.build();

    TripletBuilder p(sp.n_u(), 2 * nc);
    auto id = [this](int i, int j) { return static_cast<Eigen::Index>(j) * (nx_ + 1) + i; };
    for (std::size_t n = 0; n < sp.num_nodes(); ++n) {
      int i, j;
      double s, t;
      cell_of(sp.node_point(n), i, j, s, t);
      std::array<std::pair<Eigen::Index, double>, 3> w;
      if (s >= t)
        w = {{{id(i, j), 1.0 - s}, {id(i + 1, j), s - t}, {id(i + 1, j + 1), t}}};
      else
        w = {{{id(i, j), 1.0 - t}, {id(i + 1, j + 1), s}, {id(i, j + 1), t - s}}};
      for (int c = 0; c < 2; ++c)
        for (auto [k, v] : w)
          if (v != 0.0) p.add(sp.velocity_dof(n, c), k + c * nc, v);
    }
    prolong_ = p.build();
  }

  void build_cell_average() {
    const auto& sp = *space_;
    const Eigen::Index nc = static_cast<Eigen::Index>(nx_) * ny_;
    const auto rule = default_rule();
    std::vector<double> area(static_cast<std::size_t>(nc), 0.0);
    TripletBuilder r(2 * nc, sp.n_u());
    for (std::size_t e = 0; e < sp.mesh().num_triangles(); ++e) {
      auto geo = sp.geometry(e);
      int i, j;
      double s, t;
      cell_of(geo.map(1.0 / 3.0, 1.0 / 3.0), i, j, s, t);
      const Eigen::Index k = static_cast<Eigen::Index>(j) * nx_ + i;
      area[k] += geo.area();
      std::array<double, 6> integral{};
      for (const auto& q : rule.triangle) {
        auto phi = P2Basis::values(q.xi, q.eta);
        for (int a = 0; a < 6; ++a) integral[a] += q.weight * std::abs(geo.det) * phi[a];
      }
      auto nodes = sp.element_nodes(e);
      for (int c = 0; c < 2; ++c)
        for (int a = 0; a < 6; ++a) r.add(k + c * nc, sp.velocity_dof(nodes[a], c), integral[a]);
    }
    SparseMatrix raw = r.build();
    Vector inv(2 * nc);
    for (Eigen::Index k = 0; k < nc; ++k) inv[k] = inv[k + nc] = area[k] > 0.0 ? 1.0 / area[k] : 0.0;
    restrict_ = inv.asDiagonal() * raw;
    restrict_.makeCompressed();

    // piecewise constant: a node takes the mean of the non-empty cells it touches
    TripletBuilder p(sp.n_u(), 2 * nc);
    for (std::size_t n = 0; n < sp.num_nodes(); ++n) {
      Point x = sp.node_point(n);
      double fx = (x.x - box_.x0) / box_.width() * nx_, fy = (x.y - box_.y0) / box_.height() * ny_;
      std::vector<Eigen::Index> cells;
      for (int i : {static_cast<int>(std::floor(fx - 1e-9)), static_cast<int>(std::floor(fx + 1e-9))})
        for (int j : {static_cast<int>(std::floor(fy - 1e-9)), static_cast<int>(std::floor(fy + 1e-9))}) {
          if (i < 0 || i >= nx_ || j < 0 || j >= ny_) continue;
          Eigen::Index k = static_cast<Eigen::Index>(j) * nx_ + i;
          if (area[k] > 0.0 && std::find(cells.begin(), cells.end(), k) == cells.end()) cells.push_back(k);
        }
      if (cells.empty()) {
        int i, j;
        double s, t;
        cell_of(x, i, j, s, t);
        cells.push_back(static_cast<Eigen::Index>(j) * nx_ + i);
      }
      for (int c = 0; c < 2; ++c)
        for (auto k : cells) p.add(sp.velocity_dof(n, c), k + c * nc, 1.0 / cells.size());
    }
    prolong_ = p.build();
  }

  std::shared_ptr<const TaylorHoodSpace> space_;
  double h_;
  ObservationKind kind_;
  Rect box_;
  int nx_ = 1, ny_ = 1;
  bool coarser_than_mesh_ = true;
  SparseMatrix restrict_, restrict_t_, prolong_;
};

/// mu (I_h v, w) = v^T-free form N = mu M Pr R, kept factored as U V with
/// U = mu M Pr and V = R.
struct NudgingForms {
  double mu = 0.0;
  SparseMatrix U;  ///< n_u x sites
  SparseMatrix V;  ///< sites x n_u

  SparseMatrix matrix() const {
    SparseMatrix n = U * V;
    n.makeCompressed();
    return n;
  }
  /// mu (I_h u_obs, w) for every test function w.
  Vector rhs(const Vector& frame_values) const {
    if (frame_values.size() != U.cols()) throw DimensionError("nudging rhs: frame has wrong size");
    return U * frame_values;
  }
};

inline NudgingForms assemble_nudging(const ObservationOperator& op, const SparseMatrix& mass, double mu) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw InvalidArgument("nudging parameter mu must be >= 0");
  if (mass.rows() != op.space().n_u()) throw DimensionError("nudging: mass matrix does not match the operator's space");
  NudgingForms f;
  f.mu = mu;
  f.U = SparseMatrix(mu * (mass * op.prolongation()));
  f.U.prune(0.0);
  f.V = op.restriction();
  return f;
}

// ---------------------------------------------------------------------------
// Streams

struct ObservationFrame {
  double t = 0.0;
  Vector values;
};

struct StreamMeta {
  double h_coarse = 0.0;
  ObservationKind kind = ObservationKind::CoarseP1Nodal;
  double dt_obs = 0.0;
  std::uint64_t values_per_frame = 0;
};

enum class StreamSource { ReferenceRun, ExternalFile };

struct ObservationStream {
  StreamMeta meta;
  std::vector<ObservationFrame> frames;
  StreamSource source = StreamSource::ReferenceRun;
};

inline StreamMeta stream_meta(const ObservationOperator& op, double dt_obs) {
  return {op.h_coarse(), op.kind(), dt_obs, static_cast<std::uint64_t>(op.values_per_frame())};
}

/// Throws ValidationError when the stream cannot feed this operator.
inline void check_compatible(const StreamMeta& meta, const ObservationOperator& op) {
  std::vector<std::string> bad;
  if (std::abs(meta.h_coarse - op.h_coarse()) > 1e-12 * op.h_coarse())
    bad.push_back("stream spacing " + detail::format_double(meta.h_coarse) + " differs from operator spacing " +
                  detail::format_double(op.h_coarse()));
  if (meta.kind != op.kind()) bad.push_back(std::string("stream kind ") + to_string(meta.kind) + " differs from operator kind");
  if (meta.values_per_frame != static_cast<std::uint64_t>(op.values_per_frame()))
    bad.push_back("stream has " + std::to_string(meta.values_per_frame) + " values per frame, operator expects " +
                  std::to_string(op.values_per_frame()));
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

namespace detail {

constexpr char kObsMagic[4] = {'O', 'B', 'S', '1'};
constexpr std::size_t kObsHeader = 4 + 8 + 1 + 8 + 8 + 8;

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline std::string obs_header(const StreamMeta& m, std::uint64_t count) {
  std::string h(kObsMagic, 4);
  put(h, m.h_coarse);
  put(h, static_cast<std::uint8_t>(m.kind));
  put(h, m.dt_obs);
  put(h, count);
  put(h, m.values_per_frame);
  return h;
}

inline bool uniform_step(double prev, double cur, double dt) {
  return std::abs((cur - prev) - dt) <= 1e-9 * std::max(1.0, std::abs(dt));
}

}  // namespace detail

/// Writes frames as they are produced; the frame count in the header is
/// patched on close(). Owns its file exclusively.
class StreamRecorder {
 public:
  StreamRecorder(const std::string& path, const StreamMeta& meta) : path_(path), meta_(meta) {
    if (!(meta.dt_obs > 0.0)) throw InvalidArgument("observation interval must be positive");
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    auto h = detail::obs_header(meta_, 0);
    out_.write(h.data(), static_cast<std::streamsize>(h.size()));
  }
  StreamRecorder(const StreamRecorder&) = delete;
  StreamRecorder& operator=(const StreamRecorder&) = delete;
  ~StreamRecorder() {
    try {
      close();
    } catch (...) {
    }
  }

  void write(const ObservationFrame& f) {
    if (!out_.is_open()) throw IoError("recorder for '" + path_ + "' is closed");
    if (f.values.size() != static_cast<Eigen::Index>(meta_.values_per_frame))
      throw DimensionError("frame has " + std::to_string(f.values.size()) + " values, stream expects " +
                           std::to_string(meta_.values_per_frame));
    if (!f.values.allFinite() || !std::isfinite(f.t)) throw InvalidArgument("non-finite observation frame");
    if (count_ > 0 && !detail::uniform_step(last_t_, f.t, meta_.dt_obs))
      throw ValidationError({"frame time " + detail::format_double(f.t) + " breaks the uniform interval"});
    std::string buf;
    detail::put(buf, f.t);
    buf.append(reinterpret_cast<const char*>(f.values.data()), sizeof(double) * f.values.size());
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out_) throw IoError("write to '" + path_ + "' failed");
    last_t_ = f.t;
    ++count_;
  }

  void close() {
    if (!out_.is_open()) return;
    out_.seekp(4 + 8 + 1 + 8);
    std::string c;
    detail::put(c, count_);
    out_.write(c.data(), 8);
    out_.close();
    if (out_.fail()) throw IoError("closing '" + path_ + "' failed");
  }

  std::uint64_t frames_written() const { return count_; }

 private:
  std::string path_;
  StreamMeta meta_;
  std::ofstream out_;
  std::uint64_t count_ = 0;
  double last_t_ = 0.0;
};

inline void write_stream(const std::string& path, const ObservationStream& s) {
  StreamRecorder rec(path, s.meta);
  for (const auto& f : s.frames) rec.write(f);
  rec.close();
}

/// Parses OBS1 bytes. Truncation and bad magic are parse errors; decreasing
/// or nonuniform stamps are validation errors.
inline ObservationStream parse_stream(const std::string& bytes) {
  if (bytes.size() < detail::kObsHeader) throw ParseError("observation stream shorter than its header", 0);
  if (std::memcmp(bytes.data(), detail::kObsMagic, 4) != 0) throw ParseError("missing OBS1 magic", 0);
  const char* p = bytes.data() + 4;
  ObservationStream s;
  s.source = StreamSource::ExternalFile;
  s.meta.h_coarse = detail::get<double>(p);
  std::uint8_t kind = detail::get<std::uint8_t>(p + 8);
  if (kind > 1) throw ParseError("unknown observation kind " + std::to_string(kind), 0);
  s.meta.kind = static_cast<ObservationKind>(kind);
  s.meta.dt_obs = detail::get<double>(p + 9);
  std::uint64_t count = detail::get<std::uint64_t>(p + 17);
  s.meta.values_per_frame = detail::get<std::uint64_t>(p + 25);
  if (!(s.meta.h_coarse > 0.0) || !(s.meta.dt_obs > 0.0)) throw ParseError("non-positive spacing or interval in header", 0);
  const std::uint64_t frame_bytes = 8 * (1 + s.meta.values_per_frame);
  if (s.meta.values_per_frame > (1ull << 32) || count > (bytes.size() - detail::kObsHeader) / frame_bytes ||
      bytes.size() != detail::kObsHeader + count * frame_bytes)
    throw ParseError("observation stream size does not match its header (" + std::to_string(count) + " frames of " +
                         std::to_string(s.meta.values_per_frame) + " values)",
                     0);
  s.frames.resize(count);
  const char* q = bytes.data() + detail::kObsHeader;
  std::vector<std::string> bad;
  for (std::uint64_t k = 0; k < count; ++k) {
    auto& f = s.frames[k];
    f.t = detail::get<double>(q);
    f.values.resize(static_cast<Eigen::Index>(s.meta.values_per_frame));
    std::memcpy(f.values.data(), q + 8, 8 * s.meta.values_per_frame);
    q += frame_bytes;
    if (!std::isfinite(f.t) || !f.values.allFinite()) bad.push_back("frame " + std::to_string(k) + " has non-finite entries");
    if (k > 0 && !(f.t > s.frames[k - 1].t))
      bad.push_back("frame " + std::to_string(k) + " time stamp does not increase");
    else if (k > 0 && !detail::uniform_step(s.frames[k - 1].t, f.t, s.meta.dt_obs))
      bad.push_back("frame " + std::to_string(k) + " breaks the uniform interval " + detail::format_double(s.meta.dt_obs));
  }
  if (!bad.empty()) throw ValidationError(std::move(bad));
  return s;
}

inline ObservationStream read_stream(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_stream(bytes);
}

/// Frame holding: the frame in effect at time t is the latest with t_k <= t.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual const StreamMeta& meta() const = 0;
  /// Blocks until the frame in effect at t is available.
  virtual Vector values_at(double t) = 0;
};

namespace detail {

inline std::int64_t frame_index(double t, double t0, double dt) {
  return static_cast<std::int64_t>(std::floor((t - t0) / dt + 1e-9));
}

}  // namespace detail

/// Serves frames from an in-memory stream.
class StreamFrameSource : public FrameSource {
 public:
  explicit StreamFrameSource(const ObservationStream& s) : s_(&s) {
    if (s.frames.empty()) throw ValidationError({"observation stream has no frames"});
  }
  const StreamMeta& meta() const override { return s_->meta; }
  Vector values_at(double t) override {
    auto k = detail::frame_index(t, s_->frames.front().t, s_->meta.dt_obs);
    if (k < 0 || k >= static_cast<std::int64_t>(s_->frames.size()))
      throw ValidationError({"observation stream does not cover t=" + detail::format_double(t)});
    return s_->frames[static_cast<std::size_t>(k)].values;
  }

 private:
  const ObservationStream* s_;
};

/// Bounded single-producer/single-consumer frame queue. The producer blocks
/// while the queue is full; the consumer blocks until the frame it needs has
/// arrived. Frames older than the last one served are discarded.
class FrameQueue : public FrameSource {
 public:
  FrameQueue(StreamMeta meta, std::size_t capacity) : meta_(meta), capacity_(std::max<std::size_t>(capacity, 2)) {}

  const StreamMeta& meta() const override { return meta_; }

  void push(ObservationFrame f) {
    std::unique_lock lk(m_);
    not_full_.wait(lk, [&] { return q_.size() < capacity_ || closed_; });
    if (closed_) return;
    if (have_t0_ == false) t0_ = f.t, have_t0_ = true;
    q_.push_back(std::move(f));
    ++pushed_;
    not_empty_.notify_all();
  }

  /// No more frames will arrive; waiting consumers fail instead of blocking.
  void close() {
    std::lock_guard lk(m_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  Vector values_at(double t) override {
    std::unique_lock lk(m_);
    not_empty_.wait(lk, [&] { return have_t0_ || closed_; });
    if (!have_t0_) throw ValidationError({"frame queue closed before any frame arrived"});
    const auto k = detail::frame_index(t, t0_, meta_.dt_obs);
    if (k < 0) throw ValidationError({"no observation frame at or before t=" + detail::format_double(t)});
    while (true) {
      // drop frames that can no longer be needed (times are nondecreasing)
      while (!q_.empty() && q_front_index() < k) {
        q_.pop_front();
        ++popped_;
        not_full_.notify_all();
      }
      if (!q_.empty() && q_front_index() == k) return q_.front().values;
      if (!q_.empty() && q_front_index() > k)
        throw ValidationError({"observation frame for t=" + detail::format_double(t) + " was already discarded"});
      if (closed_) throw ValidationError({"observation stream ended before t=" + detail::format_double(t)});
      not_empty_.wait(lk);
    }
  }

 private:
  std::int64_t q_front_index() const { return static_cast<std::int64_t>(popped_); }

  StreamMeta meta_;
  std::size_t capacity_;
  std::mutex m_;
  std::condition_variable not_full_, not_empty_;
  std::deque<ObservationFrame> q_;
  bool closed_ = false, have_t0_ = false;
  double t0_ = 0.0;
  std::uint64_t pushed_ = 0, popped_ = 0;
};

// ---------------------------------------------------------------------------
// Interpolation constant

struct InterpolationEstimate {
  double c0 = 0.0;              ///< max of the per-field ratios
  std::vector<double> ratios;  ///< ||phi - I phi||^2 / (h^2 ||phi||_1^2)
  std::vector<double> bounds;  ///< ||I phi|| / ||phi||_1
};

/// Empirical constant in ||phi - I_h phi||^2 <= c0 h^2 ||phi||_1^2 over a
/// set of fine-space fields, with ||.||_1 the full H1 norm.
inline InterpolationEstimate estimate_c0(const ObservationOperator& op, const FormSet& forms,
                                         const std::vector<Vector>& fields) {
  InterpolationEstimate out;
  for (const auto& u : fields) {
    Vector e = u - op.interpolate(u);
    double h1 = u.dot(forms.M * u) + u.dot(forms.K * u);
    if (!(h1 > 0.0)) throw InvalidArgument("estimate_c0: zero field");
    double r = e.dot(forms.M * e) / (op.h_coarse() * op.h_coarse() * h1);
    out.ratios.push_back(r);
    Vector iu = op.interpolate(u);
    out.bounds.push_back(std::sqrt(iu.dot(forms.M * iu) / h1));
    out.c0 = std::max(out.c0, r);
  }
  return out;
}

}  // namespace nudgeflow

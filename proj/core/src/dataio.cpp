#include "sfbd/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "sfbd/error.hpp"
#include "sfbd/nn.hpp"

namespace sfbd {

namespace {

constexpr char kMagic[4] = {'N', 'T', 'S', 'R'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[offset + i]) << (8 * i);
  return v;
}

void need(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t n, const char* field) {
  if (bytes.size() < offset + n) {
    throw FormatError(std::string("tensor file truncated in ") + field + " at byte offset " +
                      std::to_string(offset) + " (file has " + std::to_string(bytes.size()) + " bytes)");
  }
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

}  // namespace

std::size_t tensor_header_size(std::size_t ndim) { return 4 + 4 + 1 + 1 + 8 * ndim; }

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype) {
  if (t.ndim() > 255) throw FormatError("tensor file: more than 255 dimensions");
  std::vector<std::uint8_t> out;
  out.reserve(tensor_header_size(t.ndim()) + t.size() * dtype_size(dtype));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kTensorFileVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.ndim()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double v : t.data()) {
    if (dtype == DType::f32) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  need(bytes, 0, 4, "magic");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw FormatError("tensor file: bad magic at byte offset 0");
  }
  need(bytes, 4, 4, "version");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kTensorFileVersion) {
    throw FormatError("tensor file: unsupported version " + std::to_string(version) + " at byte offset 4");
  }
  need(bytes, 8, 1, "dtype");
  const std::uint8_t code = bytes[8];
  if (code > 1) throw FormatError("tensor file: unknown dtype code " + std::to_string(code) + " at byte offset 8");
  const auto dtype = static_cast<DType>(code);
  need(bytes, 9, 1, "ndim");
  const std::size_t ndim = bytes[9];
  if (ndim == 0) throw FormatError("tensor file: ndim is 0 at byte offset 9");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::size_t off = 10 + 8 * i;
    need(bytes, off, 8, "dims");
    shape[i] = get_le<std::uint64_t>(bytes, off);
    if (shape[i] == 0) throw FormatError("tensor file: zero dimension at byte offset " + std::to_string(off));
  }
  const std::size_t header = tensor_header_size(ndim);
  const std::size_t n = shape_numel(shape);
  const std::size_t width = dtype_size(dtype);
  need(bytes, header, n * width, "payload");
  if (bytes.size() != header + n * width) {
    throw FormatError("tensor file: " + std::to_string(bytes.size() - header - n * width) +
                      " trailing bytes after payload at byte offset " + std::to_string(header + n * width));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = header + i * width;
    data[i] = dtype == DType::f32 ? static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, off)))
                                  : std::bit_cast<double>(get_le<std::uint64_t>(bytes, off));
  }
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const fs::path& path, const Tensor& t, DType dtype) {
  const auto bytes = encode_tensor(t, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor read_tensor(const fs::path& path) {
  ReadAudit::global().record(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ReadAudit& ReadAudit::global() {
  static ReadAudit audit;
  return audit;
}

void ReadAudit::record(const fs::path& path) {
  std::lock_guard lock(mu_);
  paths_.push_back(fs::absolute(path).lexically_normal());
}

std::vector<fs::path> ReadAudit::paths() const {
  std::lock_guard lock(mu_);
  return paths_;
}

void ReadAudit::clear() {
  std::lock_guard lock(mu_);
  paths_.clear();
}

void SubjectData::validate() const {
  require_matrix(fmri, "subject fmri");
  require_matrix(img, "subject img");
  require_matrix(txt, "subject txt");
  if (img.rows() != fmri.rows() || txt.rows() != fmri.rows()) {
    throw ShapeError("subject " + name + ": sample counts differ across modalities (" +
                     std::to_string(fmri.rows()) + ", " + std::to_string(img.rows()) + ", " +
                     std::to_string(txt.rows()) + ")");
  }
}

void write_subject(const fs::path& dir, const SubjectData& subject) {
  subject.validate();
  fs::create_directories(dir);
  write_tensor(dir / "fmri.ntsr", subject.fmri);
  write_tensor(dir / "img.ntsr", subject.img);
  write_tensor(dir / "txt.ntsr", subject.txt);
}

SubjectData read_subject(const fs::path& dir) {
  if (!is_subject_dir(dir)) {
    throw IoError(dir.string() + " is not a subject directory (needs fmri.ntsr, img.ntsr, txt.ntsr)");
  }
  SubjectData s;
  s.name = fs::absolute(dir).lexically_normal().filename().string();
  if (s.name.empty()) s.name = fs::absolute(dir).lexically_normal().parent_path().filename().string();
  s.fmri = read_tensor(dir / "fmri.ntsr");
  s.img = read_tensor(dir / "img.ntsr");
  s.txt = read_tensor(dir / "txt.ntsr");
  s.validate();
  return s;
}

bool is_subject_dir(const fs::path& dir) {
  return fs::is_regular_file(dir / "fmri.ntsr") && fs::is_regular_file(dir / "img.ntsr") &&
         fs::is_regular_file(dir / "txt.ntsr");
}

std::vector<fs::path> list_subject_dirs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && is_subject_dir(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

SyntheticConfig SyntheticConfig::desk() { return SyntheticConfig{}; }

SyntheticConfig SyntheticConfig::paper() {
  SyntheticConfig c;
  c.voxel_counts = {15724, 14278, 13039, 12682};
  c.pooled_width = 8192;
  c.img_width = 257 * 768;
  c.txt_width = 77 * 768;
  return c;
}

void SyntheticConfig::validate() const {
  if (n_subjects == 0) throw ConfigError("synthetic: need at least one subject");
  if (voxel_counts.size() < n_subjects) {
    throw ConfigError("synthetic: " + std::to_string(n_subjects) + " subjects but only " +
                      std::to_string(voxel_counts.size()) + " voxel counts");
  }
  for (std::size_t s = 0; s < n_subjects; ++s) {
    if (voxel_counts[s] < pooled_width) {
      throw ConfigError("synthetic: subject " + std::to_string(s) + " has " + std::to_string(voxel_counts[s]) +
                        " voxels, fewer than the pooled width " + std::to_string(pooled_width));
    }
  }
  if (latent_dim == 0 || samples == 0 || img_width == 0 || txt_width == 0 || pooled_width == 0) {
    throw ConfigError("synthetic: sizes must be positive");
  }
  if (!(shift >= 0.0) || !(fmri_noise >= 0.0) || !(embed_noise >= 0.0) || !(voxel_jitter >= 0.0)) {
    throw ConfigError("synthetic: shift and noise levels must be non-negative");
  }
}

namespace {

Tensor gaussian(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

void normalize_rows_in_place(Tensor& t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (double v : t.row(i)) s += v * v;
    const double n = std::sqrt(s);
    if (n == 0.0) throw NumericError("synthetic: zero embedding row " + std::to_string(i));
    for (auto& v : t.row(i)) v /= n;
  }
}

}  // namespace

SyntheticCohort gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t k = cfg.latent_dim;
  SyntheticCohort cohort;
  cohort.image_mixing = gaussian({cfg.img_width, k}, rng);
  cohort.text_mixing = gaussian({cfg.txt_width, k}, rng);
  const Tensor shared_projection = gaussian({cfg.pooled_width, k}, rng);

  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const std::size_t f = cfg.voxel_counts[s];
    // Subject projection in pooled space, expanded to voxels slice by slice.
    Tensor pooled_projection = shared_projection;
    const Tensor deviation = gaussian({cfg.pooled_width, k}, rng);
    for (std::size_t i = 0; i < pooled_projection.size(); ++i) pooled_projection[i] += cfg.shift * deviation[i];
    const Tensor jitter = gaussian({f, k}, rng, cfg.shift * cfg.voxel_jitter);
    const Tensor offset = gaussian({f}, rng, cfg.shift * 0.5);
    Tensor projection({f, k});
    for (std::size_t j = 0; j < cfg.pooled_width; ++j) {
      const PoolSlice slice = pool_slice(f, cfg.pooled_width, j);
      for (std::size_t v = slice.begin; v < slice.end; ++v) {
        for (std::size_t c = 0; c < k; ++c) projection.at(v, c) = pooled_projection.at(j, c) + jitter.at(v, c);
      }
    }

    const Tensor z = gaussian({cfg.samples, k}, rng);
    SubjectData subj;
    subj.name = "subj" + std::to_string(s);
    subj.img = matmul_nt_values(z, cohort.image_mixing);
    subj.txt = matmul_nt_values(z, cohort.text_mixing);
    const Tensor img_noise = gaussian(subj.img.shape(), rng, cfg.embed_noise);
    const Tensor txt_noise = gaussian(subj.txt.shape(), rng, cfg.embed_noise);
    for (std::size_t i = 0; i < subj.img.size(); ++i) subj.img[i] += img_noise[i] * std::sqrt(double(k));
    for (std::size_t i = 0; i < subj.txt.size(); ++i) subj.txt[i] += txt_noise[i] * std::sqrt(double(k));
    normalize_rows_in_place(subj.img);
    normalize_rows_in_place(subj.txt);

    subj.fmri = matmul_nt_values(z, projection);
    const Tensor fmri_noise = gaussian(subj.fmri.shape(), rng, cfg.fmri_noise);
    for (std::size_t i = 0; i < cfg.samples; ++i) {
      for (std::size_t v = 0; v < f; ++v) subj.fmri.at(i, v) += offset[v] + fmri_noise.at(i, v);
    }
    cohort.subjects.push_back(std::move(subj));
  }
  return cohort;
}

void write_cohort(const fs::path& dir, const SyntheticCohort& cohort) {
  fs::create_directories(dir);
  for (const auto& s : cohort.subjects) write_subject(dir / s.name, s);
}

}  // namespace sfbd

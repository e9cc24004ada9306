#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "sfbd/tensor.hpp"

namespace sfbd {

namespace fs = std::filesystem;

/// Tensor file layout, all integers little-endian:
///   "NTSR" | u32 version (=1) | u8 dtype (0=f32, 1=f64) | u8 ndim | ndim x u64 dims | payload
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline constexpr std::uint32_t kTensorFileVersion = 1;

std::size_t tensor_header_size(std::size_t ndim);

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype = DType::f64);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const fs::path& path, const Tensor& t, DType dtype = DType::f64);
Tensor read_tensor(const fs::path& path);

/// Records every path the data layer opens for reading.
class ReadAudit {
 public:
  static ReadAudit& global();

  void record(const fs::path& path);
  std::vector<fs::path> paths() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::vector<fs::path> paths_;
};

/// Paired samples for one subject. Embedding rows are unit-norm.
struct SubjectData {
  std::string name;
  Tensor fmri;  // samples x voxels
  Tensor img;   // samples x image width
  Tensor txt;   // samples x text width

  std::size_t samples() const { return fmri.rows(); }
  void validate() const;
};

// <dir>/fmri.ntsr, img.ntsr, txt.ntsr
void write_subject(const fs::path& dir, const SubjectData& subject);
SubjectData read_subject(const fs::path& dir);
bool is_subject_dir(const fs::path& dir);

// Subject directories directly under `dir`, sorted by name.
std::vector<fs::path> list_subject_dirs(const fs::path& dir);

struct SyntheticConfig {
  std::size_t n_subjects = 4;
  std::vector<std::size_t> voxel_counts{157, 142, 130, 126};
  std::size_t pooled_width = 64;
  std::size_t latent_dim = 8;
  std::size_t samples = 256;
  std::size_t img_width = 128;
  std::size_t txt_width = 64;
  double shift = 2.0;
  double fmri_noise = 0.3;
  double embed_noise = 0.2;
  double voxel_jitter = 0.3;
  std::uint64_t seed = 7;

  static SyntheticConfig desk();
  // Per-subject voxel counts of the four NSD subjects.
  static SyntheticConfig paper();
  void validate() const;
};

struct SyntheticCohort {
  std::vector<SubjectData> subjects;
  Tensor image_mixing;  // img_width x latent_dim
  Tensor text_mixing;   // txt_width x latent_dim
};

/// Latent-factor stand-in for paired fMRI / CLIP data. Each sample draws
/// z ~ N(0, I); embeddings are normalize(M z + noise) with M shared across
/// subjects; voxels are P_s z + b_s + noise where P_s departs from a shared
/// projection in proportion to `shift`.
SyntheticCohort gen_synthetic(const SyntheticConfig& cfg);

void write_cohort(const fs::path& dir, const SyntheticCohort& cohort);

}  // namespace sfbd

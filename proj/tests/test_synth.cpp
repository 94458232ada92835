#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "xrseq/synth.hpp"

using namespace xrseq;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
  const auto dir = fs::temp_directory_path() / "xrseq_synth_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

size_t count_files(const fs::path& dir) {
  size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    (void)e;
    ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("generate_cohort emits the advertised file counts") {
  SynthSpec spec;
  spec.n_patients = 10;
  spec.followups_per_patient = 3;
  spec.seed = 4;
  const auto dir = fresh_dir("counting");
  const CohortPaths paths = generate_cohort(spec, dir);

  CHECK(count_files(paths.image_dir) == 30);  // 10 patients x 3 frames
  std::ifstream meta(paths.metadata_csv, std::ios::binary);
  const auto records = parse_metadata(meta);
  CHECK(records.size() == 30);

  const auto tally = read_tally(paths.tally_csv);
  REQUIRE(tally.size() == 2);
  CHECK(tally.at("Mass") == 5);         // 5 grow patients, 1 window each
  CHECK(tally.at("Atelectasis") == 5);
}

TEST_CASE("same spec and seed produce bitwise-identical cohorts") {
  SynthSpec spec;
  spec.n_patients = 6;
  spec.followups_per_patient = 4;
  spec.seed = 9;
  const auto a = generate_cohort(spec, fresh_dir("det_a"));
  const auto b = generate_cohort(spec, fresh_dir("det_b"));

  CHECK(slurp(a.metadata_csv) == slurp(b.metadata_csv));
  CHECK(slurp(a.tally_csv) == slurp(b.tally_csv));
  for (const auto& entry : fs::directory_iterator(a.image_dir)) {
    const auto other = b.image_dir / entry.path().filename();
    REQUIRE(fs::exists(other));
    REQUIRE(slurp(entry.path()) == slurp(other));
  }

  SynthSpec other = spec;
  other.seed = 10;
  const auto c = generate_cohort(other, fresh_dir("det_c"));
  CHECK(slurp(a.metadata_csv) != slurp(c.metadata_csv));
}

TEST_CASE("generated cohort flows through the full ingest pipeline") {
  SynthSpec spec;
  spec.n_patients = 15;
  spec.followups_per_patient = 5;  // 3 windows per patient
  spec.seed = 21;
  spec.view_mix = 0.6;
  const auto paths = generate_cohort(spec, fresh_dir("roundtrip"));

  std::ifstream meta(paths.metadata_csv, std::ios::binary);
  const auto records = parse_metadata(meta);
  const auto groups = group_patients(records);
  const auto filtered = filter_consistent_view(filter_min_followups(groups));
  CHECK(filtered.size() == groups.size());  // synth patients are always consistent

  const auto samples = build_sample_sets(filtered);
  const auto tally = read_tally(paths.tally_csv);
  int64_t expected = 0;
  for (const auto& [label, count] : tally) expected += count;
  CHECK(static_cast<int64_t>(samples.size()) == expected);

  // per-label sample counts match the generator's declared composition
  const CohortStats stats = cohort_stats(samples);
  for (const auto& [label, count] : tally) {
    CHECK(static_cast<int64_t>(stats.per_label[static_cast<size_t>(require_label(label))]) == count);
  }

  // both views appear and the split machinery accepts the samples
  const auto [pa, ap] = split_by_view(samples);
  CHECK_FALSE(pa.empty());
  CHECK_FALSE(ap.empty());
  const auto split = split_train_test_val(pa, 1);
  CHECK(split.train.size() + split.test.size() + split.validation.size() == pa.size());
}

TEST_CASE("oracle separability on a grow-vs-shrink cohort") {
  SynthSpec spec;
  spec.n_patients = 120;
  spec.seed = 33;
  const auto paths = generate_cohort(spec, fresh_dir("oracle"));
  const SeparabilityReport rep = oracle_separability(paths.dir, spec);
  REQUIRE(rep.n_windows == 120);
  REQUIRE(rep.single_frame_auc.has_value());
  REQUIRE(rep.delta_feature_auc.has_value());
  // temporal signal is near-perfect, single frame near chance
  CHECK(*rep.delta_feature_auc >= 0.95);
  CHECK(*rep.single_frame_auc >= 0.4);
  CHECK(*rep.single_frame_auc <= 0.6);
}

TEST_CASE("noise-free grow-vs-shrink separates perfectly by construction") {
  SynthSpec spec;
  spec.n_patients = 30;
  spec.noise_level = 0.0;
  spec.seed = 2;
  const auto paths = generate_cohort(spec, fresh_dir("noiseless"));
  const SeparabilityReport rep = oracle_separability(paths.dir, spec);
  CHECK(*rep.delta_feature_auc == 1.0);
}

TEST_CASE("static-only cohort leaves both oracle AUCs undefined") {
  SynthSpec spec;
  spec.n_patients = 8;
  spec.classes = {{Motif::fixed, kNoFindingIndex}};
  spec.seed = 5;
  const auto paths = generate_cohort(spec, fresh_dir("static_only"));
  const SeparabilityReport rep = oracle_separability(paths.dir, spec);
  CHECK(rep.n_windows == 8);
  CHECK_FALSE(rep.single_frame_auc.has_value());
  CHECK_FALSE(rep.delta_feature_auc.has_value());
}

TEST_CASE("pooled per-frame blob mass marginals match across grow and shrink") {
  SynthSpec spec;
  spec.n_patients = 100;
  spec.seed = 13;
  const auto paths = generate_cohort(spec, fresh_dir("marginals"));

  std::ifstream meta(paths.metadata_csv, std::ios::binary);
  const auto records = parse_metadata(meta);
  std::vector<double> grow_masses, shrink_masses;
  for (const auto& r : records) {
    const double mass = blob_mass(load_grayscale((paths.image_dir / r.image_index).string()));
    if (r.labels[0] == require_label("Mass")) grow_masses.push_back(mass);
    else shrink_masses.push_back(mass);
  }
  REQUIRE(grow_masses.size() == shrink_masses.size());
  // same size multiset drawn in opposite orders: pooled distributions are
  // statistically identical, so pooled AUC sits at chance
  std::vector<double> all = grow_masses;
  all.insert(all.end(), shrink_masses.begin(), shrink_masses.end());
  std::vector<int> is_grow(all.size(), 0);
  std::fill(is_grow.begin(), is_grow.begin() + static_cast<std::ptrdiff_t>(grow_masses.size()), 1);
  const double pooled_auc = *auc_score(all, is_grow);
  CHECK(pooled_auc > 0.45);
  CHECK(pooled_auc < 0.55);
}

TEST_CASE("1024 mode exercises the resize path end to end") {
  SynthSpec spec;
  spec.n_patients = 2;
  spec.image_size = 1024;
  spec.seed = 6;
  const auto paths = generate_cohort(spec, fresh_dir("big"));
  const RawImage img = load_grayscale((paths.image_dir / "00000001_000.png").string());
  CHECK(img.width == 1024);
  CHECK(img.height == 1024);
  const Tensor t = resize_normalize(img);
  CHECK(t.shape() == std::vector<int>{128, 128, 1});
  float peak = 0.0f;
  for (int64_t i = 0; i < t.numel(); ++i) peak = std::max(peak, t[i]);
  CHECK(peak > 0.3f);  // the blob survives downsampling
}

TEST_CASE("drift and static motifs generate and ingest cleanly") {
  SynthSpec spec;
  spec.n_patients = 8;
  spec.classes = {{Motif::drift, require_label("Nodule")}, {Motif::fixed, kNoFindingIndex}};
  spec.seed = 14;
  const auto paths = generate_cohort(spec, fresh_dir("drift"));
  std::ifstream meta(paths.metadata_csv, std::ios::binary);
  const auto samples = build_sample_sets(group_patients(parse_metadata(meta)));
  REQUIRE(samples.size() == 8);
  const CohortStats stats = cohort_stats(samples);
  CHECK(stats.per_label[static_cast<size_t>(require_label("Nodule"))] == 4);
  CHECK(stats.per_label[static_cast<size_t>(kNoFindingIndex)] == 4);

  // drifting blob: center moves, so frame1 and frame3 differ even with no noise
  SynthSpec clean = spec;
  clean.noise_level = 0.0;
  clean.classes = {{Motif::drift, require_label("Nodule")}};
  const auto clean_paths = generate_cohort(clean, fresh_dir("drift_clean"));
  const RawImage f0 = load_grayscale((clean_paths.image_dir / "00000001_000.png").string());
  const RawImage f2 = load_grayscale((clean_paths.image_dir / "00000001_002.png").string());
  CHECK(f0.pixels != f2.pixels);
}

TEST_CASE("spec validation rejects bad cohort parameters") {
  auto expect_config_error = [](SynthSpec spec) {
    try {
      validate_synth_spec(spec);
      FAIL("expected ConfigError");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::config_error);
    }
  };
  SynthSpec p0;
  p0.n_patients = 0;
  expect_config_error(p0);
  SynthSpec f2;
  f2.followups_per_patient = 2;
  expect_config_error(f2);
  SynthSpec dup;
  dup.classes = {{Motif::grow, 3}, {Motif::shrink, 3}};
  expect_config_error(dup);
  SynthSpec badsize;
  badsize.image_size = 256;
  expect_config_error(badsize);
}

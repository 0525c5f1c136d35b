#include "meps/shdd.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace meps {

using nlohmann::json;
namespace fs = std::filesystem;

std::string manifest_to_json(const Manifest& manifest) {
  json entries = json::array();
  for (const ManifestEntry& e : manifest.entries) {
    json regions = json::array();
    for (const RegionDistortion& rd : e.regions) {
      json strength = nullptr;
      if (rd.spec.kind != DistortionKind::kIdentity) strength = rd.spec.strength;
      regions.push_back({{"x", rd.region.x},
                         {"y", rd.region.y},
                         {"w", rd.region.w},
                         {"h", rd.region.h},
                         {"kind", std::string(kind_name(rd.spec.kind))},
                         {"strength", strength},
                         {"seed", rd.spec.seed}});
    }
    entries.push_back({{"source", e.source},
                       {"split", e.split},
                       {"variant", e.variant},
                       {"width", e.width},
                       {"height", e.height},
                       {"file", e.file},
                       {"clean", e.clean},
                       {"regions", std::move(regions)}});
  }
  json doc = {{"version", manifest.version},
              {"master_seed", manifest.master_seed},
              {"level", std::string(level_name(manifest.level))},
              {"entries", std::move(entries)}};
  return doc.dump(2) + "\n";
}

Manifest manifest_from_json(std::string_view text) {
  const json doc = json::parse(text);
  Manifest m;
  m.version = doc.at("version").get<int>();
  if (m.version != kManifestVersion) {
    throw std::runtime_error("unsupported manifest version " + std::to_string(m.version));
  }
  m.master_seed = doc.at("master_seed").get<std::uint64_t>();
  m.level = level_from_name(doc.at("level").get<std::string>());
  for (const json& je : doc.at("entries")) {
    ManifestEntry e;
    e.source = je.at("source").get<std::string>();
    e.split = je.at("split").get<std::string>();
    e.variant = je.at("variant").get<std::size_t>();
    e.width = je.at("width").get<std::size_t>();
    e.height = je.at("height").get<std::size_t>();
    e.file = je.at("file").get<std::string>();
    e.clean = je.at("clean").get<std::string>();
    for (const json& jr : je.at("regions")) {
      RegionDistortion rd;
      rd.region = {jr.at("x").get<std::size_t>(), jr.at("y").get<std::size_t>(),
                   jr.at("w").get<std::size_t>(), jr.at("h").get<std::size_t>()};
      rd.spec.kind = kind_from_name(jr.at("kind").get<std::string>());
      rd.spec.strength = jr.at("strength").is_null() ? 0.0 : jr.at("strength").get<double>();
      rd.spec.seed = jr.at("seed").get<std::uint64_t>();
      e.regions.push_back(rd);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << manifest_to_json(manifest);
}

std::uint64_t variant_seed(std::uint64_t master_seed, std::string_view source, std::size_t variant) {
  return Rng::child_seed(Rng::child_seed(master_seed, fnv1a64(source)), variant);
}

ManifestEntry sample_entry(std::string_view source, std::size_t width, std::size_t height, Level level,
                           std::size_t variant, std::uint64_t master_seed) {
  Rng rng(variant_seed(master_seed, source, variant));
  ManifestEntry entry;
  entry.source = std::string(source);
  entry.variant = variant;
  entry.width = width;
  entry.height = height;
  for (const Region& r : split_regions(width, height, level_chops(level), rng)) {
    RegionDistortion rd;
    rd.region = r;
    rd.spec.kind = kAllDistortions[rng.below(kAllDistortions.size())];
    if (const auto range = strength_range(rd.spec.kind)) rd.spec.strength = rng.uniform(range->lo, range->hi);
    rd.spec.seed = rng.next_u64();
    entry.regions.push_back(rd);
  }
  return entry;
}

Image render_entry(const Image& clean, const ManifestEntry& entry) {
  if (clean.width() != entry.width || clean.height() != entry.height) {
    throw std::invalid_argument("render_entry: clean image size does not match manifest entry for " +
                                entry.source);
  }
  Image out = clean;
  for (const RegionDistortion& rd : entry.regions) {
    Image patch = crop(clean, rd.region);
    distort_region(patch, rd.spec);
    paste(out, patch, rd.region);
  }
  return out;
}

SynthResult synthesize_image(const Image& clean, std::string_view source, Level level, std::size_t variant,
                             std::uint64_t master_seed) {
  ManifestEntry entry = sample_entry(source, clean.width(), clean.height(), level, variant, master_seed);
  Image distorted = render_entry(clean, entry);
  return {std::move(distorted), std::move(entry)};
}

namespace {

struct SourceJob {
  fs::path path;
  std::string stem;
  std::string split;
};

struct SourceResult {
  std::vector<ManifestEntry> entries;
  std::optional<std::string> warning;
};

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("clean directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(dir)) {
    if (!de.is_regular_file()) continue;
    std::string ext = de.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(de.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

SourceResult process_source(const SourceJob& job, const GenerateConfig& cfg, std::size_t variants) {
  SourceResult result;
  Image clean;
  try {
    clean = read_png(job.path);
  } catch (const std::exception& e) {
    result.warning = "skipping " + job.path.string() + ": " + e.what();
    return result;
  }
  const std::string clean_rel = job.split + "/clean/" + job.stem + ".png";
  write_png(cfg.out_dir / clean_rel, clean);
  try {
    for (std::size_t v = 0; v < variants; ++v) {
      SynthResult s = synthesize_image(clean, job.stem, cfg.level, v, cfg.seed);
      s.entry.split = job.split;
      s.entry.file = job.split + "/" + job.stem + "_" + std::to_string(v) + ".png";
      s.entry.clean = clean_rel;
      write_png(cfg.out_dir / s.entry.file, s.distorted);
      result.entries.push_back(std::move(s.entry));
    }
  } catch (const std::invalid_argument& e) {
    result.entries.clear();
    result.warning = "skipping " + job.path.string() + ": " + e.what();
  }
  return result;
}

}  // namespace

GenerateReport generate_dataset(const GenerateConfig& cfg) {
  const std::vector<std::string> known = {"train", "val", "test", "holdout"};
  if (std::find(known.begin(), known.end(), cfg.split) == known.end()) {
    throw std::invalid_argument("unknown split '" + cfg.split + "' (train|val|test|holdout)");
  }
  const std::vector<fs::path> files = list_pngs(cfg.clean_dir);
  if (files.empty()) throw std::runtime_error("no PNG images in " + cfg.clean_dir.string());

  const fs::path manifest_path = cfg.out_dir / "manifest.json";
  Manifest manifest;
  manifest.master_seed = cfg.seed;
  manifest.level = cfg.level;
  if (fs::exists(manifest_path)) {
    Manifest prior = read_manifest(manifest_path);
    if (prior.master_seed != cfg.seed || prior.level != cfg.level) {
      throw std::runtime_error("existing manifest in " + cfg.out_dir.string() +
                               " was generated with a different seed or level");
    }
    manifest.entries = std::move(prior.entries);
  }

  std::vector<SourceJob> jobs;
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::string split = cfg.split;
    if (split == "holdout") split = i < (files.size() + 1) / 2 ? "val" : "test";
    jobs.push_back({files[i], files[i].stem().string(), split});
  }
  std::vector<std::string> splits;
  for (const SourceJob& j : jobs) {
    if (std::find(splits.begin(), splits.end(), j.split) == splits.end()) splits.push_back(j.split);
    fs::create_directories(cfg.out_dir / j.split / "clean");
  }
  std::erase_if(manifest.entries, [&](const ManifestEntry& e) {
    return std::find(splits.begin(), splits.end(), e.split) != splits.end();
  });

  std::vector<SourceResult> results(jobs.size());
  std::vector<std::exception_ptr> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const std::size_t variants = cfg.variants.value_or(jobs[i].split == "train" ? kTrainVariants : 1);
      try {
        results[i] = process_source(jobs[i], cfg, variants);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(cfg.threads, 1, jobs.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  GenerateReport report;
  for (SourceResult& r : results) {
    if (r.warning) {
      report.warnings.push_back(*r.warning);
      continue;
    }
    ++report.sources;
    report.images_written += r.entries.size();
    for (ManifestEntry& e : r.entries) manifest.entries.push_back(std::move(e));
  }
  if (report.sources == 0) throw std::runtime_error("no decodable images in " + cfg.clean_dir.string());
  std::sort(manifest.entries.begin(), manifest.entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return std::tie(a.split, a.source, a.variant) < std::tie(b.split, b.source, b.variant);
  });
  write_manifest(manifest_path, manifest);
  return report;
}

LoadedSplit load_split(const fs::path& root, const std::string& split) {
  const Manifest manifest = read_manifest(root / "manifest.json");
  LoadedSplit out;
  for (const ManifestEntry& e : manifest.entries) {
    if (e.split != split) continue;
    try {
      ImagePair pair{e.file, read_png(root / e.file), read_png(root / e.clean)};
      if (pair.distorted.width() != pair.clean.width() || pair.distorted.height() != pair.clean.height()) {
        throw std::runtime_error("size mismatch with clean counterpart");
      }
      out.pairs.push_back(std::move(pair));
    } catch (const std::exception&) {
      out.skipped.push_back(e.file);
    }
  }
  return out;
}

}  // namespace meps

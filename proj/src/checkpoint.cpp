#include "lgd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lgd/errors.hpp"

namespace lgd {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void bytes(const std::string& s) { raw(s.data(), s.size()); }
  void floats(std::span<const float> v) { raw(v.data(), v.size() * sizeof(float)); }
  const std::string& buffer() const { return buf_; }

 private:
  void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  uint32_t u32(const std::string& what) {
    uint32_t v;
    take(&v, sizeof v, what);
    return v;
  }
  std::string bytes(size_t n, const std::string& what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(std::span<float> out, const std::string& what) { take(out.data(), out.size() * sizeof(float), what); }
  size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(size_t n, const std::string& what) {
    if (data_.size() - pos_ < n)
      throw LoadError("'" + path_ + "': truncated at offset " + std::to_string(pos_) + " reading " + what + " (need " +
                      std::to_string(n) + " bytes, " + std::to_string(data_.size() - pos_) + " left)");
  }
  void take(void* dst, size_t n, const std::string& what) {
    need(n, what);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  std::string data_;
  std::string path_;
  size_t pos_ = 0;
};

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("write to '" + path + "' failed");
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) return Tensor(Shape{0});
  Shape s{static_cast<int64_t>(items.size())};
  for (auto d : items.front().shape()) s.push_back(d);
  std::vector<float> out;
  out.reserve(static_cast<size_t>(numel_of(s)));
  for (const auto& t : items) out.insert(out.end(), t.data().begin(), t.data().end());
  return Tensor(std::move(s), std::move(out));
}

Tensor unstack(const Tensor& t, int64_t i) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  const int64_t n = numel_of(s);
  auto d = t.data().subspan(static_cast<size_t>(i * n), static_cast<size_t>(n));
  return Tensor(std::move(s), std::vector<float>(d.begin(), d.end()));
}

const Tensor& require(const TensorMap& m, const std::string& name, const std::string& path) {
  auto it = m.find(name);
  if (it == m.end()) throw LoadError("'" + path + "': missing tensor '" + name + "'");
  return it->second;
}

void require_kind(const nlohmann::json& cfg, const std::string& kind, const std::string& path) {
  if (cfg.value("kind", std::string()) != kind)
    throw LoadError("'" + path + "' is not a " + kind + " checkpoint (kind '" + cfg.value("kind", std::string("?")) + "')");
}

}  // namespace

void save_checkpoint(const std::string& path, const TensorMap& tensors, const nlohmann::json& config) {
  Writer w;
  w.bytes(std::string(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<uint32_t>(d));
    w.floats(t.data());
  }
  const std::string js = config.dump();
  w.u32(static_cast<uint32_t>(js.size()));
  w.bytes(js);
  write_file(path, w.buffer());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open '" + path + "'");
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}), path);
  if (r.bytes(4, "magic") != std::string(kCheckpointMagic, 4)) throw LoadError("'" + path + "': bad magic (not an LGDF file)");
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw LoadError("'" + path + "': unsupported version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const uint32_t count = r.u32("entry count");
  Checkpoint ck;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string entry = "entry " + std::to_string(i);
    const uint32_t len = r.u32(entry + " name length");
    const std::string name = r.bytes(len, entry + " name");
    const std::string label = entry + " '" + name + "'";
    const uint32_t rank = r.u32(label + " rank");
    if (rank > 8) throw LoadError("'" + path + "': " + label + " has implausible rank " + std::to_string(rank));
    Shape shape;
    for (uint32_t k = 0; k < rank; ++k) shape.push_back(r.u32(label + " dims"));
    Tensor t(shape);
    r.floats(t.mutable_data(), label + " payload");
    if (!ck.tensors.emplace(name, std::move(t)).second) throw LoadError("'" + path + "': duplicate tensor '" + name + "'");
  }
  const uint32_t jlen = r.u32("config length");
  const std::string js = r.bytes(jlen, "config json");
  try {
    ck.config = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("'" + path + "': config json at offset " + std::to_string(r.offset() - jlen) + ": " + e.what());
  }
  if (!r.at_end()) throw LoadError("'" + path + "': trailing bytes after offset " + std::to_string(r.offset()));
  return ck;
}

void save_unet(const std::string& path, const UNet& net, const NoiseSchedule& sched, const nlohmann::json& extra) {
  nlohmann::json cfg = extra;
  cfg["kind"] = "unet";
  cfg["unet"] = net.config().to_json();
  cfg["schedule"] = {{"steps", sched.steps()}, {"kind", to_string(sched.kind())}};
  save_checkpoint(path, net.registry().state(), cfg);
}

LoadedUNet load_unet(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  require_kind(ck.config, "unet", path);
  UNet net(UNetConfig::from_json(ck.config.at("unet")), 0);
  net.registry().load_state(ck.tensors);
  const auto& sj = ck.config.at("schedule");
  NoiseSchedule sched = build_schedule(sj.at("steps").get<int>(), parse_schedule_kind(sj.at("kind").get<std::string>()));
  return {std::move(net), std::move(sched), ck.config};
}

void save_lgp(const std::string& path, const LatentGuidancePredictor& lgp, const nlohmann::json& extra) {
  nlohmann::json cfg = extra;
  cfg["kind"] = "lgp";
  cfg["lgp"] = lgp.config().to_json();
  save_checkpoint(path, lgp.registry().state(), cfg);
}

LatentGuidancePredictor load_lgp(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  require_kind(ck.config, "lgp", path);
  LatentGuidancePredictor lgp(LGPConfig::from_json(ck.config.at("lgp")), 0);
  lgp.registry().load_state(ck.tensors);
  return lgp;
}

void save_corpus(const std::string& path, const ShapesCorpus& corpus) {
  std::vector<Tensor> images, edges, sketches, saliency;
  std::vector<int> ids;
  for (const auto& it : corpus.items) {
    images.push_back(it.image);
    edges.push_back(it.edges);
    sketches.push_back(it.sketch);
    saliency.push_back(it.saliency);
    ids.push_back(it.class_id);
  }
  TensorMap t{{"images", stack(images)}, {"edges", stack(edges)}, {"sketches", stack(sketches)},
              {"saliency", stack(saliency)}};
  nlohmann::json cfg = {{"kind", "corpus"}, {"gen", corpus.config.to_json()}, {"class_ids", ids}};
  save_checkpoint(path, t, cfg);
}

ShapesCorpus load_corpus(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  require_kind(ck.config, "corpus", path);
  ShapesCorpus c;
  c.config = GenConfig::from_json(ck.config.at("gen"));
  const auto ids = ck.config.at("class_ids").get<std::vector<int>>();
  const Tensor& images = require(ck.tensors, "images", path);
  const Tensor& edges = require(ck.tensors, "edges", path);
  const Tensor& sketches = require(ck.tensors, "sketches", path);
  const Tensor& saliency = require(ck.tensors, "saliency", path);
  for (const Tensor* t : {&images, &edges, &sketches, &saliency})
    if (t->dim(0) != static_cast<int64_t>(ids.size()))
      throw LoadError("'" + path + "': tensor rows disagree with class id count");
  for (size_t i = 0; i < ids.size(); ++i) {
    const auto k = static_cast<int64_t>(i);
    if (ids[i] < 0 || ids[i] >= static_cast<int>(c.config.classes.size()))
      throw LoadError("'" + path + "': class id out of range at item " + std::to_string(i));
    c.items.push_back({unstack(images, k), ids[i], unstack(edges, k), unstack(sketches, k), unstack(saliency, k)});
  }
  return c;
}

}  // namespace lgd

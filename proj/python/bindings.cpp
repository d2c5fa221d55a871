#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "lgd/checkpoint.hpp"
#include "lgd/errors.hpp"
#include "lgd/experiments.hpp"

namespace py = pybind11;
using namespace lgd;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// [H,W] or [1,H,W] input, returned with the rank it came in.
Tensor image_tensor(const Array& a) {
  if (a.ndim() == 2) return Tensor({1, a.shape(0), a.shape(1)}, std::vector<float>(a.data(), a.data() + a.size()));
  if (a.ndim() == 3 && a.shape(0) == 1) return to_tensor(a);
  throw ShapeError("expected an image of shape [H,W] or [1,H,W]");
}

Array image_like(const Tensor& t, const Array& like) {
  Array out = to_array(t);
  return like.ndim() == 2 ? out.reshape({t.dim(1), t.dim(2)}) : out;
}

// Denoiser bundled with its schedule and class names, as stored on disk.
struct Denoiser {
  std::shared_ptr<UNet> net;
  std::shared_ptr<NoiseSchedule> sched;
  std::vector<std::string> classes;

  int class_id(const std::string& name) const {
    for (size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == name) return static_cast<int>(i);
    throw InputError("unknown class '" + name + "'");
  }
};

struct Predictor {
  std::shared_ptr<LatentGuidancePredictor> lgp;
};

Denoiser load_denoiser(const std::string& path) {
  LoadedUNet l = load_unet(path);
  Denoiser d{std::make_shared<UNet>(std::move(l.net)), std::make_shared<NoiseSchedule>(l.sched), kDefaultClasses};
  if (l.config.contains("classes")) d.classes = l.config["classes"].get<std::vector<std::string>>();
  return d;
}

}  // namespace

PYBIND11_MODULE(_lgd, m) {
  m.doc() = "Latent guided diffusion toy core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<LoadError>(m, "LoadError", base.ptr());

  py::class_<NoiseSchedule, std::shared_ptr<NoiseSchedule>>(m, "NoiseSchedule")
      .def_property_readonly("steps", &NoiseSchedule::steps)
      .def("alpha", &NoiseSchedule::alpha, py::arg("t"))
      .def("mu", &NoiseSchedule::mu, py::arg("t"))
      .def("alpha_bar", &NoiseSchedule::alpha_bar, py::arg("t"))
      .def("beta", &NoiseSchedule::beta, py::arg("t"));

  m.def(
      "build_schedule",
      [](int steps, const std::string& kind) {
        return std::make_shared<NoiseSchedule>(build_schedule(steps, parse_schedule_kind(kind)));
      },
      py::arg("steps") = 250, py::arg("kind") = "cosine");
  m.def(
      "noise_image",
      [](const Array& z0, int t, const Array& xi, const NoiseSchedule& s) {
        return to_array(noise_image(to_tensor(z0), t, to_tensor(xi), s));
      },
      py::arg("z0"), py::arg("t"), py::arg("xi"), py::arg("schedule"));

  m.def(
      "extract_edges",
      [](const Array& img, float threshold) { return image_like(extract_edges(image_tensor(img), threshold).data, img); },
      py::arg("image"), py::arg("threshold") = 0.5f);
  m.def(
      "sobel_magnitude", [](const Array& img) { return image_like(sobel_magnitude(image_tensor(img)), img); },
      py::arg("image"));
  m.def(
      "make_saliency",
      [](int64_t h, int64_t w, float cx, float cy, float sigma) {
        const Tensor t = make_saliency(h, w, cx, cy, sigma).data;
        return to_array(reshape(t, {h, w}));
      },
      py::arg("h"), py::arg("w"), py::arg("cx"), py::arg("cy"), py::arg("sigma"));
  m.def(
      "apply_guidance",
      [](const Array& z_t, const Array& z_next, const Array& grad, float beta) {
        return to_array(apply_guidance(to_tensor(z_t), to_tensor(z_next), to_tensor(grad), beta).z);
      },
      py::arg("z_t"), py::arg("z_next"), py::arg("grad"), py::arg("beta"),
      "z_next - alpha * grad with alpha = beta * ||z_t - z_next|| / ||grad||.");
  m.def(
      "edge_fidelity",
      [](const Array& sample, const Array& target_edges) {
        return eval_edge_fidelity(image_tensor(sample), image_tensor(target_edges));
      },
      py::arg("sample"), py::arg("target_edges"));
  m.def(
      "sign_test",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const SignTest s = sign_test(a, b);
        return py::dict(py::arg("wins") = s.wins, py::arg("losses") = s.losses, py::arg("ties") = s.ties,
                        py::arg("p_value") = s.p_value);
      },
      py::arg("a"), py::arg("b"), "One-sided paired sign test of 'a tends to be smaller than b'.");
  m.def("read_pgm", [](const std::string& path) { return to_array(read_pgm(path)); }, py::arg("path"));
  m.def(
      "write_pgm", [](const std::string& path, const Array& img) { write_pgm(path, image_tensor(img)); },
      py::arg("path"), py::arg("image"));

  py::class_<ShapesCorpus, std::shared_ptr<ShapesCorpus>>(m, "Corpus")
      .def("__len__", [](const ShapesCorpus& c) { return c.items.size(); })
      .def_property_readonly("class_names", &ShapesCorpus::class_names)
      .def("image", [](const ShapesCorpus& c, size_t i) { return to_array(c.items.at(i).image); })
      .def("edges", [](const ShapesCorpus& c, size_t i) { return to_array(c.items.at(i).edges); })
      .def("sketch", [](const ShapesCorpus& c, size_t i) { return to_array(c.items.at(i).sketch); })
      .def("class_id", [](const ShapesCorpus& c, size_t i) { return c.items.at(i).class_id; })
      .def("save", [](const ShapesCorpus& c, const std::string& path) { save_corpus(path, c); });
  m.def(
      "gen_dataset",
      [](int n, int size, uint64_t seed, bool hand_drawn) {
        GenConfig g;
        g.n = n;
        g.size = size;
        g.seed = seed;
        g.hand_drawn = hand_drawn;
        return std::make_shared<ShapesCorpus>(gen_dataset(g));
      },
      py::arg("n") = 2000, py::arg("size") = 32, py::arg("seed") = 0, py::arg("hand_drawn") = false);
  m.def(
      "load_corpus", [](const std::string& path) { return std::make_shared<ShapesCorpus>(load_corpus(path)); },
      py::arg("path"));

  py::class_<Denoiser>(m, "Denoiser")
      .def_property_readonly("schedule", [](const Denoiser& d) { return d.sched; })
      .def_property_readonly("class_names", [](const Denoiser& d) { return d.classes; })
      .def_property_readonly("feature_channels", [](const Denoiser& d) { return d.net->feature_channels(); })
      .def(
          "eps",
          [](const Denoiser& d, const Array& z, int t, std::optional<int> cls) {
            NoGradGuard ng;
            return to_array(d.net->forward(to_tensor(z), t, cls, false).eps);
          },
          py::arg("z"), py::arg("t"), py::arg("class_id") = py::none(), "Noise prediction for z[N,C,H,W] at step t.")
      .def(
          "save",
          [](const Denoiser& d, const std::string& path) {
            save_unet(path, *d.net, *d.sched, {{"classes", d.classes}});
          },
          py::arg("path"));
  m.def("load_denoiser", &load_denoiser, py::arg("path"));
  m.def(
      "train_ddpm",
      [](const ShapesCorpus& corpus, int steps, int batch, float lr, int base_width, int emb_dim, int schedule_steps,
         uint64_t seed) {
        UNetConfig uc;
        uc.image_size = corpus.config.size;
        uc.num_classes = static_cast<int>(corpus.class_names().size());
        uc.base_width = base_width;
        uc.emb_dim = emb_dim;
        Denoiser d{std::make_shared<UNet>(uc, seed),
                   std::make_shared<NoiseSchedule>(build_schedule(schedule_steps, ScheduleKind::kCosine)),
                   corpus.class_names()};
        DdpmTrainConfig tc;
        tc.steps = steps;
        tc.batch = batch;
        tc.lr = lr;
        Rng rng(seed + 1);
        py::gil_scoped_release release;
        const TrainLog log = train_ddpm(*d.net, labeled_images(corpus), *d.sched, tc, rng);
        return std::make_pair(d, log.losses);
      },
      py::arg("corpus"), py::arg("steps") = 3000, py::arg("batch") = 16, py::arg("lr") = 1e-3f,
      py::arg("base_width") = 32, py::arg("emb_dim") = 128, py::arg("schedule_steps") = 250, py::arg("seed") = 0,
      "Returns (denoiser, per-step losses).");

  py::class_<Predictor>(m, "Predictor")
      .def_property_readonly("loss", [](const Predictor& p) { return to_string(p.lgp->config().loss); })
      .def(
          "predict",
          [](const Predictor& p, const Array& features, float t_norm) {
            return to_array(p.lgp->predict(to_tensor(features), t_norm));
          },
          py::arg("features"), py::arg("t_norm"), "Per-pixel prediction for features[N,C,H,W].")
      .def(
          "error_curve",
          [](const Predictor& p, const Denoiser& d, const ShapesCorpus& heldout, const std::vector<float>& grid,
             int samples, uint64_t seed) {
            Rng rng(seed);
            const auto held = lgp_samples(heldout, MapKind::kEdges, Encoder::identity());
            return lgp_error_curve(*p.lgp, *d.net, held, *d.sched, grid, samples, rng);
          },
          py::arg("denoiser"), py::arg("heldout"), py::arg("grid"), py::arg("samples") = 100, py::arg("seed") = 0)
      .def("save", [](const Predictor& p, const std::string& path) { save_lgp(path, *p.lgp); }, py::arg("path"));
  m.def(
      "load_predictor",
      [](const std::string& path) { return Predictor{std::make_shared<LatentGuidancePredictor>(load_lgp(path))}; },
      py::arg("path"));
  m.def(
      "train_lgp",
      [](const ShapesCorpus& corpus, const Denoiser& d, int steps, int batch, float lr, std::vector<int> hidden,
         const std::string& loss, uint64_t seed) {
        LGPConfig lc;
        lc.feature_channels = static_cast<int>(d.net->feature_channels());
        lc.hidden = std::move(hidden);
        lc.loss = parse_loss_kind(loss);
        lc.out_dim = lc.loss == LossKind::kCe ? 2 : 1;
        Predictor p{std::make_shared<LatentGuidancePredictor>(lc, seed)};
        LgpTrainConfig tc;
        tc.steps = steps;
        tc.batch = batch;
        tc.lr = lr;
        Rng rng(seed + 1);
        py::gil_scoped_release release;
        const auto samples = lgp_samples(corpus, MapKind::kEdges, Encoder::identity());
        const TrainLog log = lgp_train(*p.lgp, samples, *d.net, *d.sched, tc, rng);
        return std::make_pair(p, log.losses);
      },
      py::arg("corpus"), py::arg("denoiser"), py::arg("steps") = 3000, py::arg("batch") = 16, py::arg("lr") = 1e-3f,
      py::arg("hidden") = std::vector<int>{512, 256, 128, 64}, py::arg("loss") = "sq_err", py::arg("seed") = 0,
      "Returns (predictor, per-step losses).");

  m.def(
      "sample",
      [](const Denoiser& d, const std::string& cls, uint64_t seed, const Predictor* p, std::optional<Array> sketch,
         float beta, float start_frac, float stop_frac, float cfg_scale, bool stochastic) {
        SampleRunConfig run;
        run.steps = d.sched->steps();
        run.seed = seed;
        run.class_id = d.class_id(cls);
        run.cfg_scale = cfg_scale;
        run.stochastic = stochastic;
        std::optional<GuidanceTarget> target;
        if (sketch) {
          if (!p) throw UsageError("guided sampling needs a predictor");
          const SpatialMap map = make_spatial_map(image_tensor(*sketch), MapKind::kSaliency);
          target = GuidanceTarget{map.data, p->lgp->config().loss, start_frac, stop_frac, beta};
        }
        SampleResult r;
        {
          py::gil_scoped_release release;
          r = sample(*d.net, p ? p->lgp.get() : nullptr, target ? &*target : nullptr, run, *d.sched);
        }
        std::vector<float> losses;
        for (const auto& s : r.log) losses.push_back(s.guidance_loss);
        return std::make_pair(to_array(r.image), losses);
      },
      py::arg("denoiser"), py::arg("class_name"), py::arg("seed") = 0, py::arg("predictor") = nullptr,
      py::arg("sketch") = py::none(), py::arg("beta") = 1.6f, py::arg("start_frac") = 1.0f,
      py::arg("stop_frac") = 0.5f, py::arg("cfg_scale") = 8.0f, py::arg("stochastic") = true,
      "Returns (image[1,H,W], per-step guidance loss with NaN for unguided steps).");
}

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stvit/bench.hpp"
#include "stvit/complexity.hpp"
#include "stvit/presets.hpp"
#include "stvit/recovery_lab.hpp"

namespace py = pybind11;
using namespace stvit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

py::object json_loads(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

ModelConfig resolve(const std::string& preset_or_json) {
    if (!preset_or_json.empty() && preset_or_json.front() == '{') return parse_model_config(preset_or_json);
    return preset(preset_or_json);
}

py::tuple run_forward(const std::string& model, std::uint64_t seed, std::optional<Array> image,
                      std::optional<std::string> weights_dir, bool export_attention) {
    const ModelConfig cfg = resolve(model);
    const ModelWeights w = weights_dir ? load_weights(*weights_dir, cfg) : random_weights(cfg, seed);
    const Tensor input = image ? to_tensor(*image) : random_image(cfg, seed);
    ForwardResult r;
    {
        py::gil_scoped_release release;
        r = forward(cfg, w, input, {export_attention});
    }
    return py::make_tuple(to_array(r.logits), json_loads(trace_to_json(r.trace, false, -1)));
}

py::dict run_recovery(std::size_t clusters, std::size_t dim, std::size_t samples, double sigma, double gamma_max,
                      std::uint64_t seed, const std::string& init, double perturbation, std::optional<double> lambda,
                      std::size_t updates) {
    const MixtureSpec spec{clusters, dim, samples, sigma, gamma_max, seed};
    ExperimentOptions opts;
    opts.init = parse_init_kind(init);
    opts.perturbation = perturbation;
    opts.lambda = lambda ? LambdaRule::fixed(*lambda) : LambdaRule::theorem();
    opts.updates = updates;
    RecoveryReport r;
    {
        py::gil_scoped_release release;
        r = run_experiment(spec, opts);
    }
    return json_loads(recovery_report_to_json(r, -1));
}

}  // namespace

PYBIND11_MODULE(_stvit, m) {
    m.doc() = "Semantic token vision transformer reference implementation";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def("preset_names", &preset_names, "Names of the built-in model configurations.");
    m.def(
        "preset_config", [](const std::string& name) { return json_loads(model_config_to_json(preset(name))); },
        py::arg("name"), "Model config of a preset as a dict.");
    m.def(
        "flops",
        [](const std::string& model) { return json_loads(flops_report_to_json(flops_counted(resolve(model)), -1)); },
        py::arg("model"), "Counted MACs report for a preset name or a config JSON string.");
    m.def("forward", &run_forward, py::arg("model"), py::arg("seed") = 0, py::arg("image") = py::none(),
          py::arg("weights_dir") = py::none(), py::arg("export_attention") = false,
          "Run a forward pass; returns (logits, trace dict).");
    m.def(
        "attention_update",
        [](const Array& points, const Array& mu_hat, double lambda) {
            const AttentionUpdate u = attention_update(to_tensor(points), to_tensor(mu_hat), lambda);
            return py::make_tuple(to_array(u.mu_prime), to_array(u.z), to_array(u.max_logit));
        },
        py::arg("points"), py::arg("mu_hat"), py::arg("lam"),
        "One softmax-attention update; returns (mu_prime, z, max_logit).");
    m.def(
        "sample_mixture",
        [](std::size_t clusters, std::size_t dim, std::size_t samples, double sigma, double gamma_max,
           std::uint64_t seed) {
            const Mixture mix = sample_mixture({clusters, dim, samples, sigma, gamma_max, seed});
            return py::make_tuple(to_array(mix.centers), to_array(mix.points));
        },
        py::arg("clusters") = 8, py::arg("dim") = 64, py::arg("samples") = 2000, py::arg("sigma") = 0.5,
        py::arg("gamma_max") = 0.1, py::arg("seed") = 0);
    m.def("run_recovery", &run_recovery, py::arg("clusters") = 8, py::arg("dim") = 64, py::arg("samples") = 2000,
          py::arg("sigma") = 0.5, py::arg("gamma_max") = 0.1, py::arg("seed") = 0, py::arg("init") = "true_perturbed",
          py::arg("perturbation") = 0.5, py::arg("lam") = py::none(), py::arg("updates") = 1,
          "Cluster recovery experiment; returns the report as a dict.");
    m.def(
        "decoupled_logits_gap",
        [](const Array& s1, const Array& g, const Array& keys, const Array& wq, const Array& wk) {
            const Tensor a = to_tensor(s1), b = to_tensor(g), k = to_tensor(keys), q = to_tensor(wq), kw = to_tensor(wk);
            return max_abs_diff(fused_query_logits(a, b, k, q, kw), decoupled_query_logits(a, b, k, q, kw));
        },
        py::arg("s1"), py::arg("g"), py::arg("keys"), py::arg("w_q"), py::arg("w_k"),
        "Largest difference between fused and decoupled second-layer logits.");
    m.def("set_num_threads", &set_num_threads, py::arg("n"));
}

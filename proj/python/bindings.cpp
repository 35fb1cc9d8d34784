// Python module: architectures and neural graphs, line-fit baselines,
// scaling, k-decay, nowcaster checkpoints, task presets and the
// permutation experiment. Arrays cross as float64 numpy matrices.

#include "nino/baselines.hpp"
#include "nino/config.hpp"
#include "nino/harness.hpp"
#include "nino/neural_graph.hpp"
#include "nino/nino_model.hpp"
#include "nino/symmetry_lab.hpp"
#include "nino/task_zoo.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace nino;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ParameterWindow make_window(const RowMatrix& states, int stride) {
    ParameterWindow w;
    w.states = states;
    w.stride = stride;
    return w;
}

}  // namespace

PYBIND11_MODULE(_nino, m) {
    m.doc() = "Neural-graph nowcasting of network parameters";

    py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<ParamTensor>(m, "ParamTensor")
        .def_readonly("name", &ParamTensor::name)
        .def_readonly("layer", &ParamTensor::layer)
        .def_readonly("offset", &ParamTensor::offset)
        .def_readonly("rows", &ParamTensor::rows)
        .def_readonly("cols", &ParamTensor::cols);

    py::class_<ArchSpec>(m, "ArchSpec")
        .def_property_readonly("num_params", &ArchSpec::num_params)
        .def("tensors", &ArchSpec::tensors)
        .def("to_json", [](const ArchSpec& a) { return arch_to_json(a); })
        .def_static("from_json", &arch_from_json)
        .def("__repr__", [](const ArchSpec& a) {
            return "<ArchSpec layers=" + std::to_string(a.layers.size()) + " params=" + std::to_string(a.num_params()) + ">";
        });

    m.def("make_mlp", &make_mlp, py::arg("widths"), py::arg("bias") = true);
    m.def("make_cnn", &make_cnn, py::arg("in_channels"), py::arg("channels"), py::arg("classes"), py::arg("kernel") = 3);
    m.def("make_gpt", &make_gpt, py::arg("vocab"), py::arg("context"), py::arg("layers"), py::arg("width"),
          py::arg("heads"), py::arg("untied_head") = false);
    m.def("make_msa_only", &make_msa_only, py::arg("width"), py::arg("heads"), py::arg("bias") = false);

    py::class_<NeuralGraphTemplate, std::shared_ptr<NeuralGraphTemplate>>(m, "GraphTemplate")
        .def_property_readonly("mode", [](const NeuralGraphTemplate& t) { return std::string(to_string(t.mode)); })
        .def_property_readonly("num_nodes", &NeuralGraphTemplate::num_nodes)
        .def_property_readonly("num_edges", &NeuralGraphTemplate::num_edges)
        .def_property_readonly("num_params", &NeuralGraphTemplate::num_params)
        .def_property_readonly("num_aux", &NeuralGraphTemplate::num_aux)
        .def_property_readonly("max_channels", &NeuralGraphTemplate::max_channels)
        .def_property_readonly("lpe", [](const NeuralGraphTemplate& t) { return RowMatrix(t.features.lpe); })
        .def("to_json", &NeuralGraphTemplate::to_json);

    m.def(
        "build_template",
        [](const ArchSpec& spec, const std::string& mode) {
            return std::const_pointer_cast<NeuralGraphTemplate>(build_template(spec, graph_mode_from_string(mode)));
        },
        py::arg("spec"), py::arg("mode") = "ours");

    m.def(
        "edge_features",
        [](const std::shared_ptr<NeuralGraphTemplate>& t, const std::vector<double>& theta) {
            if (theta.size() != t->num_params()) throw std::invalid_argument("theta has the wrong length");
            return RowMatrix(edge_state(attach_state(t, theta), 0));
        },
        py::arg("template"), py::arg("theta"), "Edge channels [edges x max_channels] of one parameter vector.");
    m.def(
        "graph_inverse",
        [](const std::shared_ptr<NeuralGraphTemplate>& t, const RowMatrix& edges) {
            return Vector(graph_inverse(*t, edges));
        },
        py::arg("template"), py::arg("edges"));
    m.def(
        "wl_signature",
        [](const std::shared_ptr<NeuralGraphTemplate>& t, const std::vector<double>& theta, int rounds) {
            return wl_signature(attach_state(t, theta), rounds);
        },
        py::arg("template"), py::arg("theta"), py::arg("rounds") = 3);

    m.def("linefit_predict", [](const RowMatrix& w) { return Vector(linefit_predict(w)); }, py::arg("window"),
          "Unweighted line fit of a newest-first window [n x c], extrapolated c steps ahead.");
    m.def("linefitplus_predict", [](const RowMatrix& w) { return Vector(linefitplus_predict(w)); }, py::arg("window"),
          "Line fit weighted towards recent states.");
    m.def("k_decay", &k_decay, py::arg("t"), py::arg("total"), py::arg("horizons"), py::arg("power") = 2.0);
    m.def("nowcast_schedule", &nowcast_schedule, py::arg("total_steps"), py::arg("context"), py::arg("stride"));

    m.def(
        "fit_scaler",
        [](const std::string& kind, const RowMatrix& window, const ArchSpec& spec) {
            const Scaler s = fit_scaler(scaling_kind_from_string(kind), window, spec.tensors());
            return py::make_tuple(Vector(s.offset()), Vector(s.scale()));
        },
        py::arg("kind"), py::arg("window"), py::arg("spec"), "Per-parameter (offset, scale) of a scaling variant.");

    py::class_<Nowcaster>(m, "Nowcaster")
        .def_property_readonly("name", &Nowcaster::name)
        .def_property_readonly("context", &Nowcaster::context)
        .def_property_readonly("max_horizon", &Nowcaster::max_horizon)
        .def(
            "nowcast",
            [](const Nowcaster& n, const std::shared_ptr<NeuralGraphTemplate>& t, const RowMatrix& states, int k,
               int stride) { return Vector(n.nowcast(t, make_window(states, stride), k)); },
            py::arg("template"), py::arg("states"), py::arg("k"), py::arg("stride") = 200,
            "Predicted parameters k strides ahead of a newest-first window [n x c].");
    py::class_<TrainableNowcaster, Nowcaster>(m, "TrainableNowcaster")
        .def_property_readonly("num_weights", [](const TrainableNowcaster& n) { return n.params.size(); })
        .def("config_json", &TrainableNowcaster::config_json);
    py::class_<LinefitNowcaster, Nowcaster>(m, "LinefitNowcaster")
        .def(py::init<int, bool>(), py::arg("context"), py::arg("weighted") = false);

    m.def("make_nowcaster", &make_nowcaster, py::arg("config_json"));
    m.def("load_nowcaster", &load_nowcaster, py::arg("path"));
    m.def(
        "graph_embedding",
        [](const TrainableNowcaster& n, const std::shared_ptr<NeuralGraphTemplate>& t, const RowMatrix& states) {
            const auto* model = dynamic_cast<const NinoModel*>(&n);
            if (!model) throw std::invalid_argument("graph embeddings need a nino nowcaster");
            return Vector(model->graph_embedding(model->prepare(t, states).second));
        },
        py::arg("model"), py::arg("template"), py::arg("states"));

    m.def("task_preset_names", &task_preset_names);
    m.def("task_preset_json", [](const std::string& name) { return task_preset(name).to_json(); }, py::arg("name"));
    m.def("task_arch", [](const std::string& name) { return task_preset(name).arch; }, py::arg("name"));
    m.def("validate_run_config", [](const std::string& text) { return RunConfig::from_json(text).to_json(); },
          py::arg("text"), "Normalized run config JSON; raises ConfigError listing every problem.");

    m.def(
        "msa_forward",
        [](const RowMatrix& x, const std::vector<double>& theta, int d, int heads) {
            return RowMatrix(msa_forward(x, theta, d, heads));
        },
        py::arg("x"), py::arg("theta"), py::arg("d"), py::arg("heads"));

    m.def(
        "symmetry_experiment",
        [](int d, int heads, int permutations, int gnn_hidden, int gnn_depth, std::uint64_t seed) {
            SymmetryConfig cfg;
            cfg.d = d;
            cfg.heads = heads;
            cfg.permutations = permutations;
            cfg.gnn_hidden = gnn_hidden;
            cfg.gnn_depth = gnn_depth;
            cfg.seed = seed;
            SymmetryResult r;
            {
                py::gil_scoped_release release;
                r = run_symmetry_experiment(cfg);
            }
            py::dict out;
            for (const auto& mode : r.modes) out[py::str(mode.mode)] = mode.accuracy;
            out["labels"] = r.labels;
            out["good"] = r.good;
            out["seed"] = r.seed;
            return out;
        },
        py::arg("d") = 12, py::arg("heads") = 4, py::arg("permutations") = 1000, py::arg("gnn_hidden") = 32,
        py::arg("gnn_depth") = 3, py::arg("seed") = 0,
        "Linear-probe accuracy of permutation labels from random-GNN embeddings, per graph construction.");
}

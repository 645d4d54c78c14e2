#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "phonssm/analysis.hpp"
#include "phonssm/bissm.hpp"
#include "phonssm/data.hpp"
#include "phonssm/graph.hpp"
#include "phonssm/model.hpp"
#include "phonssm/pdm.hpp"

namespace py = pybind11;
using namespace phonssm;

namespace {

Tensor tensor_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i)
        shape.push_back(static_cast<int>(a.shape(i)));
    Tensor t(shape);
    std::copy(a.data(), a.data() + a.size(), t.data());
    return t;
}

py::array_t<double> array_from(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (int d : t.shape()) shape.push_back(d);
    py::array_t<double> a(shape);
    std::copy(t.data(), t.data() + t.size(), a.mutable_data());
    return a;
}

SsmParams ssm_params_from(const py::array_t<double>& log_a, const py::array_t<double>& w_b,
                          const py::array_t<double>& w_c, const py::array_t<double>& w_delta,
                          double b_delta) {
    SsmParams p;
    p.log_a = tensor_from(log_a);
    p.w_b = tensor_from(w_b);
    p.w_c = tensor_from(w_c);
    p.w_delta = tensor_from(w_delta);
    p.b_delta = Tensor::scalar(b_delta);
    return p;
}

/// Checkpointed model exposed to python for inference-time use.
class Model {
public:
    explicit Model(const std::string& path) {
        auto [params, cfg] = phonssm::load_checkpoint(path);
        params_ = std::move(params);
        cfg_ = cfg;
    }

    py::array_t<double> logits(const py::array_t<double>& coords) const {
        return array_from(forward(coords).logits);
    }

    py::dict components(const py::array_t<double>& coords) const {
        const ForwardResult r = forward(coords);
        py::dict out;
        for (int i = 0; i < kNumComponents; ++i)
            out[kComponentNames[i]] = array_from(r.components.pooled[static_cast<std::size_t>(i)]);
        return out;
    }

    int predict(const py::array_t<double>& coords) const {
        const Tensor l = forward(coords).logits;
        int best = 0;
        for (int i = 1; i < l.dim(0); ++i)
            if (l[static_cast<std::size_t>(i)] > l[static_cast<std::size_t>(best)]) best = i;
        return best;
    }

    py::dict config() const {
        py::dict d;
        d["d"] = cfg_.d;
        d["dc"] = cfg_.dc;
        d["k"] = cfg_.k;
        d["t"] = cfg_.t;
        d["node_count"] = cfg_.layout.node_count;
        d["without_pdm"] = cfg_.without_pdm;
        return d;
    }

    std::size_t param_count() const { return phonssm::param_count(params_, cfg_); }

private:
    ForwardResult forward(const py::array_t<double>& coords) const {
        LandmarkSequence x;
        x.layout = cfg_.layout;
        x.coords = tensor_from(coords);
        return model_forward(x, params_, cfg_, Mode::Eval);
    }

    ModelParams params_;
    ModelConfig cfg_;
};

}  // namespace

PYBIND11_MODULE(_phonssm, m) {
    m.doc() = "Compositional sign classification on skeletal landmarks";

    m.def(
        "build_hand_graph",
        []() {
            const AnatomicalGraph g = build_hand_graph(LandmarkLayout::dominant_hand21());
            return py::make_tuple(g.node_count, g.edges);
        },
        "21-node dominant-hand graph as (node_count, edge list)");
    m.def(
        "build_holistic_graph",
        []() {
            const AnatomicalGraph g = build_holistic_graph(LandmarkLayout::pose_hands75());
            return py::make_tuple(g.node_count, g.edges);
        },
        "75-node pose+hands graph as (node_count, edge list)");

    m.def(
        "preprocess",
        [](const py::array_t<double>& frames, int target_t) {
            RawSequence raw;
            raw.frames = tensor_from(frames);
            raw.layout = raw.frames.dim(1) == 21 ? LandmarkLayout::dominant_hand21()
                                                 : LandmarkLayout::pose_hands75();
            return array_from(preprocess(raw, target_t).coords);
        },
        py::arg("frames"), py::arg("target_t") = 30,
        "wrist-center, palm-normalize and resample a [F,N,3] sequence");

    m.def(
        "select_dominant_hand",
        [](const py::array_t<double>& seq) {
            return array_from(select_dominant_hand(tensor_from(seq)));
        },
        "pick the hand block with the larger total displacement from [T,75,3]");

    m.def(
        "augment_shift_scale",
        [](const py::array_t<double>& coords, int shift, double scale) {
            return array_from(augment_shift_scale(tensor_from(coords), shift, scale));
        },
        py::arg("coords"), py::arg("shift"), py::arg("scale"));

    m.def("discretize", &discretize, py::arg("a"), py::arg("b"), py::arg("delta"),
          "zero-order-hold discretization of one diagonal entry; returns (abar, bbar)");

    m.def(
        "ssm_scan",
        [](const py::array_t<double>& f, const py::array_t<double>& log_a,
           const py::array_t<double>& w_b, const py::array_t<double>& w_c,
           const py::array_t<double>& w_delta, double b_delta, bool backward) {
            const SsmParams p = ssm_params_from(log_a, w_b, w_c, w_delta, b_delta);
            return array_from(
                ssm_scan(tensor_from(f), p, backward ? ScanDirection::Bwd : ScanDirection::Fwd));
        },
        py::arg("f"), py::arg("log_a"), py::arg("w_b"), py::arg("w_c"), py::arg("w_delta"),
        py::arg("b_delta") = 0.0, py::arg("backward") = false,
        "selective scan over [T,D] features");

    m.def(
        "orthogonality_loss",
        [](const py::array_t<double>& pooled) { return orthogonality_loss(tensor_from(pooled)); },
        "sum of squared pairwise cosines of the four pooled component vectors");
    m.def(
        "orthogonality_grad",
        [](const py::array_t<double>& pooled) {
            return array_from(orthogonality_grad(tensor_from(pooled)));
        });
    m.def(
        "diversity_loss",
        [](const py::array_t<double>& bank) { return diversity_loss(tensor_from(bank)); },
        "mean squared pairwise inner product of prototype rows");
    m.def(
        "capacity",
        [](const std::array<int, 4>& counts) { return capacity(counts); },
        "product of the component inventory sizes");
    m.def("phonological_distance", &phonological_distance);
    m.def(
        "minimal_pair_density",
        [](const std::vector<std::array<int, 4>>& tuples) { return minimal_pair_density(tuples); });

    m.def(
        "generate_dataset",
        [](const std::array<int, 4>& inventory, double train_fraction, int samples_per_class,
           double sigma, int frames, std::uint64_t seed, const std::string& out_dir) {
            SyntheticSpec spec;
            spec.inventory = inventory;
            spec.train_fraction = train_fraction;
            spec.samples_per_class = samples_per_class;
            spec.noise_sigma = sigma;
            spec.frames = frames;
            spec.seed = seed;
            const SyntheticDataset ds = generate_synthetic(spec);
            write_dataset(ds.train, out_dir + "/train.bin");
            write_dataset(ds.test_seen, out_dir + "/test_seen.bin");
            write_dataset(ds.test_unseen, out_dir + "/test_unseen.bin");
            write_label_map(ds.label_names, out_dir + "/labels.tsv");
            return py::make_tuple(ds.label_names.size(), ds.seen_classes.size(),
                                  ds.unseen_classes.size());
        },
        py::arg("inventory"), py::arg("train_fraction"), py::arg("samples_per_class"),
        py::arg("sigma"), py::arg("frames"), py::arg("seed"), py::arg("out_dir"));

    m.def(
        "gradcheck",
        [](std::uint64_t seed, int max_coords) {
            return micro_gradcheck(seed, max_coords).max_rel_err;
        },
        py::arg("seed") = 0, py::arg("max_coords") = 8,
        "max relative error of the tape gradient against finite differences");

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
        .def("logits", &Model::logits, py::arg("coords"))
        .def("predict", &Model::predict, py::arg("coords"))
        .def("components", &Model::components, py::arg("coords"))
        .def("config", &Model::config)
        .def("param_count", &Model::param_count);
}

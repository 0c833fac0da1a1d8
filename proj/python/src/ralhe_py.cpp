// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ralhe/bitstream.hpp"
#include "ralhe/metrics.hpp"

namespace py = pybind11;
using namespace ralhe;

namespace {

template <size_t K>
py::array_t<float> rows_to_array(const std::vector<std::array<float, K>>& rows) {
    py::array_t<float> out({rows.size(), K});
    auto r = out.template mutable_unchecked<2>();
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < K; ++j) r(py::ssize_t(i), py::ssize_t(j)) = rows[i][j];
    return out;
}

template <size_t K>
std::vector<std::array<float, K>> array_to_rows(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2 || arr.shape(1) != py::ssize_t(K))
        throw ShapeError("python: expected an array of shape (n, " + std::to_string(K) + ")");
    std::vector<std::array<float, K>> rows(size_t(arr.shape(0)));
    auto r = arr.template unchecked<2>();
    for (py::ssize_t i = 0; i < arr.shape(0); ++i)
        for (size_t j = 0; j < K; ++j) rows[size_t(i)][j] = r(i, py::ssize_t(j));
    return rows;
}

std::vector<uint8_t> bytes_to_vec(const py::bytes& b) {
    const std::string_view sv = b;
    return std::vector<uint8_t>(sv.begin(), sv.end());
}

py::bytes vec_to_bytes(const std::vector<uint8_t>& v) {
    return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

py::dict metrics_to_dict(const Metrics& m) {
    py::dict d;
    d["num_points"] = m.num_points;
    d["total_bytes"] = m.total_bytes;
    d["bpp"] = m.bpp;
    py::list attrs;
    for (const auto& a : m.attributes) {
        py::dict ad;
        ad["attr_id"] = a.attr_id;
        ad["mse"] = a.mse;
        ad["peak"] = a.peak;
        ad["psnr_db"] = a.psnr;
        ad["exact"] = a.exact;
        attrs.append(ad);
    }
    d["attributes"] = attrs;
    py::list sections;
    for (const auto& s : m.sections) {
        py::dict sd;
        sd["tag"] = s.tag;
        sd["bytes"] = s.bytes;
        sections.append(sd);
    }
    d["sections"] = sections;
    return d;
}

py::dict info_to_dict(const StreamInfo& si) {
    py::dict d;
    d["version"] = si.version;
    d["depth"] = si.depth;
    d["levels"] = si.num_levels;
    d["context"] = si.context_width;
    d["num_points"] = si.finest_count;
    d["lambda_"] = si.lambda;
    d["bbox_min"] = py::make_tuple(si.bbox_min[0], si.bbox_min[1], si.bbox_min[2]);
    d["cube_side"] = si.cube_side;
    d["decoder_widths"] = py::make_tuple(si.dec_h1, si.dec_h2, si.dec_h3);
    d["arm_widths"] = py::make_tuple(si.arm_h1, si.arm_h2);
    py::list attrs;
    for (const auto& a : si.attrs) {
        py::dict ad;
        ad["attr_id"] = a.attr_id;
        ad["channels"] = a.channels;
        ad["decoder_params"] = a.dec_params;
        ad["arm_params"] = a.arm_params;
        attrs.append(ad);
    }
    d["attributes"] = attrs;
    d["header_bytes"] = si.header_bytes;
    d["total_bytes"] = si.total_bytes;
    py::list sections;
    for (const auto& s : si.sections) {
        py::dict sd;
        sd["tag"] = s.tag;
        sd["offset"] = s.offset;
        sd["bytes"] = s.size;
        sections.append(sd);
    }
    d["sections"] = sections;
    return d;
}

EncodeConfig make_config(double lambda, int depth, int levels, int context, uint64_t seed,
                         int iterations, const std::vector<int>& attrs, uint32_t vq_size,
                         const std::string& log_path) {
    EncodeConfig cfg;
    cfg.train.lambda = lambda;
    cfg.depth = depth;
    cfg.train.num_levels = levels;
    cfg.train.context_width = context;
    cfg.train.seed = seed;
    cfg.train.iterations = iterations;
    cfg.train.log_path = log_path;
    cfg.attrs = attrs;
    cfg.vq_size = vq_size;
    return cfg;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "rate-distortion optimized attribute codec for voxelized Gaussian splats";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

    py::class_<GaussianModel>(m, "GaussianModel")
        .def(py::init<>())
        .def_property(
            "positions", [](const GaussianModel& g) { return rows_to_array<3>(g.positions); },
            [](GaussianModel& g, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
                g.positions = array_to_rows<3>(a);
            })
        .def_property(
            "scales", [](const GaussianModel& g) { return rows_to_array<3>(g.scales); },
            [](GaussianModel& g, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
                g.scales = array_to_rows<3>(a);
            })
        .def_property(
            "rotations", [](const GaussianModel& g) { return rows_to_array<4>(g.rotations); },
            [](GaussianModel& g, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
                g.rotations = array_to_rows<4>(a);
            })
        .def_property(
            "sh", [](const GaussianModel& g) { return rows_to_array<48>(g.sh); },
            [](GaussianModel& g, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
                g.sh = array_to_rows<48>(a);
            })
        .def_property(
            "opacities",
            [](const GaussianModel& g) {
                py::array_t<float> out(g.opacities.size());
                std::copy(g.opacities.begin(), g.opacities.end(), out.mutable_data());
                return out;
            },
            [](GaussianModel& g, const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
                if (a.ndim() != 1) throw ShapeError("python: opacities must be 1-d");
                g.opacities.assign(a.data(), a.data() + a.size());
            })
        .def("__len__", &GaussianModel::size)
        .def("__repr__", [](const GaussianModel& g) {
            return "GaussianModel(n=" + std::to_string(g.size()) + ")";
        });

    m.def(
        "load_ply", [](const py::bytes& b) { return load_ply(bytes_to_vec(b)); }, py::arg("data"),
        "Parse a binary little-endian 3DGS PLY.");
    m.def(
        "save_ply", [](const GaussianModel& g) { return vec_to_bytes(save_ply(g)); },
        py::arg("model"), "Serialize a model as a binary little-endian 3DGS PLY.");

    m.def(
        "encode",
        [](const GaussianModel& model, double lambda, int depth, int levels, int context,
           uint64_t seed, int iterations, const std::vector<int>& attrs, uint32_t vq_size,
           const std::string& log_path) {
            RalheBitstream bs;
            {
                py::gil_scoped_release release;
                bs = encode(model, make_config(lambda, depth, levels, context, seed, iterations,
                                               attrs, vq_size, log_path));
            }
            return vec_to_bytes(bs.bytes);
        },
        py::arg("model"), py::arg("lambda_") = 1e-3, py::arg("depth") = 10,
        py::arg("levels") = 5, py::arg("context") = 16, py::arg("seed") = 1,
        py::arg("iterations") = 10000, py::arg("attrs") = std::vector<int>{},
        py::arg("vq_size") = 64, py::arg("log_path") = std::string(),
        "Compress a model into a self-contained stream (returned as bytes).");

    m.def(
        "decode",
        [](const py::bytes& data) {
            const RalheBitstream bs{bytes_to_vec(data)};
            py::gil_scoped_release release;
            return decode(bs);
        },
        py::arg("data"), "Reconstruct a model from a coded stream.");

    m.def(
        "inspect",
        [](const py::bytes& data) { return info_to_dict(inspect(RalheBitstream{bytes_to_vec(data)})); },
        py::arg("data"), "Header fields and section table of a coded stream.");

    m.def(
        "evaluate",
        [](const GaussianModel& reference, int depth, const GaussianModel& decoded,
           const py::object& stream) {
            if (stream.is_none()) return metrics_to_dict(evaluate(reference, depth, decoded));
            const RalheBitstream bs{bytes_to_vec(py::bytes(stream))};
            return metrics_to_dict(evaluate(reference, depth, decoded, bs));
        },
        py::arg("reference"), py::arg("depth"), py::arg("decoded"), py::arg("stream") = py::none(),
        "Per-attribute PSNR of a decoded model against its reference.");

    m.def(
        "morton_encode",
        [](uint32_t x, uint32_t y, uint32_t z, int depth) {
            return uint64_t(morton_encode({x, y, z}, depth));
        },
        py::arg("x"), py::arg("y"), py::arg("z"), py::arg("depth"));
    m.def(
        "morton_decode",
        [](uint64_t code, int depth) {
            const auto v = morton_decode(MortonCode(code), depth);
            return py::make_tuple(v.x, v.y, v.z);
        },
        py::arg("code"), py::arg("depth"));

    m.attr("NUM_ATTRIBUTES") = kNumAttributes;
    m.attr("OPACITY_ATTR_ID") = kOpacityAttrId;
}

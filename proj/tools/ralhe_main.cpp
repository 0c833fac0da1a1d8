// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "ralhe/bitstream.hpp"
#include "ralhe/metrics.hpp"

using nlohmann::json;
using namespace ralhe;

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cli: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cli: cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw ConfigError("cli: short write to " + path);
}

/// Attribute selector: "opacity", "shN" with N in 0..15, or a numeric id.
int parse_attr_token(const std::string& tok) {
    if (tok == "opacity") return kOpacityAttrId;
    if (tok.size() > 2 && tok.compare(0, 2, "sh") == 0) {
        const int n = std::stoi(tok.substr(2));
        if (n < 0 || n > 15) throw ConfigError("cli: unknown attribute " + tok);
        return n + 1;
    }
    const int id = std::stoi(tok);
    if (id < 1 || id > kNumAttributes) throw ConfigError("cli: unknown attribute " + tok);
    return id;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

json attribute_json(const AttributeMetrics& a) {
    json j;
    j["attr_id"] = a.attr_id;
    j["mse"] = a.mse;
    j["peak"] = a.peak;
    j["exact"] = a.exact;
    if (a.exact)
        j["psnr_db"] = nullptr;
    else
        j["psnr_db"] = a.psnr;
    return j;
}

json metrics_json(const Metrics& m, const std::vector<int>& attr_filter) {
    json j;
    j["num_points"] = m.num_points;
    j["total_bytes"] = m.total_bytes;
    j["bpp"] = m.bpp;
    j["attributes"] = json::array();
    for (const auto& a : m.attributes) {
        if (!attr_filter.empty() &&
            std::find(attr_filter.begin(), attr_filter.end(), a.attr_id) == attr_filter.end())
            continue;
        j["attributes"].push_back(attribute_json(a));
    }
    j["sections"] = json::array();
    for (const auto& s : m.sections) j["sections"].push_back({{"tag", s.tag}, {"bytes", s.bytes}});
    return j;
}

struct EncodeFlags {
    std::string input, output;
    std::string attrs_csv;
    std::string log_path;
    EncodeConfig cfg;
};

EncodeConfig make_config(const EncodeFlags& f) {
    EncodeConfig cfg = f.cfg;
    cfg.train.log_path = f.log_path;
    for (const auto& tok : split_csv(f.attrs_csv)) cfg.attrs.push_back(parse_attr_token(tok));
    return cfg;
}

/// Shared by encode and sweep: one full encode + self-evaluation.
struct EncodeOutcome {
    RalheBitstream stream;
    Metrics metrics;
    std::vector<int> coded_ids;
};

EncodeOutcome run_encode(const GaussianModel& model, const EncodeConfig& cfg) {
    EncodeOutcome out;
    out.stream = encode(model, cfg);
    const GaussianModel decoded = decode(out.stream);
    out.metrics = evaluate(model, cfg.depth, decoded, out.stream);
    out.coded_ids = cfg.attrs;
    if (out.coded_ids.empty())
        for (int id = 1; id <= kNumAttributes; ++id) out.coded_ids.push_back(id);
    return out;
}

int cmd_encode(const EncodeFlags& flags) {
    const EncodeConfig cfg = make_config(flags);
    const GaussianModel model = load_ply(read_file(flags.input));
    const EncodeOutcome out = run_encode(model, cfg);
    write_file(flags.output, out.stream.bytes);

    json j = metrics_json(out.metrics, out.coded_ids);
    j["lambda"] = cfg.train.lambda;
    j["depth"] = cfg.depth;
    std::ofstream mjson(flags.output + ".json", std::ios::trunc);
    if (!mjson) throw ConfigError("cli: cannot write " + flags.output + ".json");
    mjson << j.dump(2) << "\n";
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_decode(const std::string& input, const std::string& output) {
    const RalheBitstream stream{read_file(input)};
    const GaussianModel model = decode(stream); // throws before any output appears
    write_file(output, save_ply(model));
    return 0;
}

int cmd_eval(const std::string& ref_path, const std::string& dec_path, int depth,
             const std::string& stream_path, const std::string& out_path) {
    const GaussianModel ref = load_ply(read_file(ref_path));
    const GaussianModel dec = load_ply(read_file(dec_path));
    Metrics m;
    if (stream_path.empty()) {
        m = evaluate(ref, depth, dec);
    } else {
        m = evaluate(ref, depth, dec, RalheBitstream{read_file(stream_path)});
    }
    const json j = metrics_json(m, {});
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw ConfigError("cli: cannot write " + out_path);
        out << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_inspect(const std::string& input) {
    const StreamInfo si = inspect(RalheBitstream{read_file(input)});
    json j;
    j["version"] = si.version;
    j["depth"] = si.depth;
    j["levels"] = si.num_levels;
    j["context"] = si.context_width;
    j["num_points"] = si.finest_count;
    j["lambda"] = si.lambda;
    j["bbox_min"] = si.bbox_min;
    j["cube_side"] = si.cube_side;
    j["decoder_widths"] = {si.dec_h1, si.dec_h2, si.dec_h3};
    j["arm_widths"] = {si.arm_h1, si.arm_h2};
    j["attributes"] = json::array();
    for (const auto& a : si.attrs)
        j["attributes"].push_back({{"attr_id", a.attr_id},
                                   {"channels", a.channels},
                                   {"decoder_params", a.dec_params},
                                   {"arm_params", a.arm_params}});
    j["header_bytes"] = si.header_bytes;
    j["total_bytes"] = si.total_bytes;
    j["sections"] = json::array();
    for (const auto& s : si.sections)
        j["sections"].push_back({{"tag", s.tag}, {"offset", s.offset}, {"bytes", s.size}});
    std::cout << j.dump(2) << "\n";
    return 0;
}

std::string sweep_header(const std::vector<int>& ids) {
    std::string h = "lambda,bytes,bpp,wall_seconds,status";
    for (int id : ids) h += ",psnr_" + std::to_string(id);
    return h;
}

/// One CSV row; failures keep the run alive and leave the numeric cells empty.
std::string sweep_row(const GaussianModel& model, const EncodeConfig& base, double lambda,
                      const std::vector<int>& ids) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", lambda);
    std::string row = buf;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        EncodeConfig cfg = base;
        cfg.train.lambda = lambda;
        const EncodeOutcome out = run_encode(model, cfg);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::snprintf(buf, sizeof buf, ",%zu,%.9g,%.3f,ok", out.stream.bytes.size(),
                      out.metrics.bpp, wall);
        row += buf;
        for (int id : ids) {
            const auto& a = out.metrics.attributes[size_t(id - 1)];
            if (a.exact)
                row += ",inf";
            else {
                std::snprintf(buf, sizeof buf, ",%.6g", a.psnr);
                row += buf;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "sweep: lambda " << lambda << " failed: " << e.what() << "\n";
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::snprintf(buf, sizeof buf, ",,,%.3f,failed", wall);
        row += buf;
        for (size_t i = 0; i < ids.size(); ++i) row += ",";
    }
    return row;
}

int cmd_sweep(const EncodeFlags& flags, const std::string& lambdas_csv, bool parallel) {
    const EncodeConfig base = make_config(flags);
    std::vector<double> lambdas;
    for (const auto& tok : split_csv(lambdas_csv)) lambdas.push_back(std::stod(tok));
    if (lambdas.empty()) throw ConfigError("cli: --lambdas needs at least one value");

    const GaussianModel model = load_ply(read_file(flags.input));
    std::vector<int> ids = base.attrs;
    if (ids.empty())
        for (int id = 1; id <= kNumAttributes; ++id) ids.push_back(id);

    std::vector<std::string> rows(lambdas.size());
    if (!parallel) {
        for (size_t i = 0; i < lambdas.size(); ++i)
            rows[i] = sweep_row(model, base, lambdas[i], ids);
    } else {
        // one child process per point: isolated state, collected in order
        std::vector<std::string> parts(lambdas.size());
        std::vector<pid_t> pids(lambdas.size());
        for (size_t i = 0; i < lambdas.size(); ++i) {
            parts[i] = flags.output + ".part" + std::to_string(i);
            const pid_t pid = fork();
            if (pid < 0) throw ConfigError("cli: fork failed");
            if (pid == 0) {
                const std::string row = sweep_row(model, base, lambdas[i], ids);
                std::ofstream out(parts[i], std::ios::trunc);
                out << row << "\n";
                out.close();
                _exit(out ? 0 : 1);
            }
            pids[i] = pid;
        }
        for (size_t i = 0; i < lambdas.size(); ++i) {
            int status = 0;
            waitpid(pids[i], &status, 0);
            std::ifstream in(parts[i]);
            if (!in || !std::getline(in, rows[i]) || !WIFEXITED(status) ||
                WEXITSTATUS(status) != 0) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.9g,,,,failed", lambdas[i]);
                rows[i] = buf;
                for (size_t a = 0; a < ids.size(); ++a) rows[i] += ",";
            }
            in.close();
            std::remove(parts[i].c_str());
        }
    }

    std::ofstream out(flags.output, std::ios::trunc);
    if (!out) throw ConfigError("cli: cannot write " + flags.output);
    out << sweep_header(ids) << "\n";
    for (const auto& r : rows) out << r << "\n";
    if (!out) throw ConfigError("cli: short write to " + flags.output);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rate-distortion optimized attribute codec for voxelized Gaussian splats"};
    app.require_subcommand(1);

    EncodeFlags ef;
    bool parallel = false;
    std::string lambdas_csv;
    std::string eval_ref, eval_dec, eval_stream, eval_out;
    std::string io_in, io_out;
    int eval_depth = 10;

    auto add_encode_flags = [&](CLI::App* c) {
        c->add_option("--lambda", ef.cfg.train.lambda, "rate weight");
        c->add_option("--depth", ef.cfg.depth, "voxelization depth");
        c->add_option("--levels", ef.cfg.train.num_levels, "latent pyramid levels");
        c->add_option("--context", ef.cfg.train.context_width, "entropy context width");
        c->add_option("--seed", ef.cfg.train.seed, "training seed");
        c->add_option("--iterations", ef.cfg.train.iterations, "training iterations");
        c->add_option("--attrs", ef.attrs_csv, "attribute subset (ids, shN, opacity)");
        c->add_option("--vq-size", ef.cfg.vq_size, "covariance codebook size");
        c->add_option("--log", ef.log_path, "per-iteration training CSV");
    };

    CLI::App* enc = app.add_subcommand("encode", "compress a PLY into a stream");
    enc->add_option("input", ef.input, "input .ply")->required();
    enc->add_option("output", ef.output, "output stream")->required();
    add_encode_flags(enc);

    CLI::App* dec = app.add_subcommand("decode", "reconstruct a PLY from a stream");
    dec->add_option("input", io_in, "input stream")->required();
    dec->add_option("output", io_out, "output .ply")->required();

    CLI::App* ev = app.add_subcommand("eval", "attribute-domain metrics of two PLYs");
    ev->add_option("reference", eval_ref, "reference .ply")->required();
    ev->add_option("decoded", eval_dec, "decoded .ply")->required();
    ev->add_option("--depth", eval_depth, "voxelization depth");
    ev->add_option("--stream", eval_stream, "stream file for byte accounting");
    ev->add_option("--out", eval_out, "write the JSON here as well");

    CLI::App* ins = app.add_subcommand("inspect", "dump header and section table");
    ins->add_option("input", io_in, "input stream")->required();

    CLI::App* sw = app.add_subcommand("sweep", "rate-distortion sweep to CSV");
    sw->add_option("input", ef.input, "input .ply")->required();
    sw->add_option("output", ef.output, "output .csv")->required();
    sw->add_option("--lambdas", lambdas_csv, "comma-separated lambda values")->required();
    sw->add_flag("--parallel", parallel, "one process per lambda");
    add_encode_flags(sw);

    CLI11_PARSE(app, argc, argv);

    try {
        if (enc->parsed()) return cmd_encode(ef);
        if (dec->parsed()) return cmd_decode(io_in, io_out);
        if (ev->parsed()) return cmd_eval(eval_ref, eval_dec, eval_depth, eval_stream, eval_out);
        if (ins->parsed()) return cmd_inspect(io_in);
        if (sw->parsed()) return cmd_sweep(ef, lambdas_csv, parallel);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

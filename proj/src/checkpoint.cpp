#include "scenedet/checkpoint.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "scenedet/error.h"
#include "scenedet/rng.h"

namespace scenedet::ckpt {

namespace {

constexpr const char* kMagic = "SCENEDET-CKPT v1";

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    throw ParseError(path + ": " + what);
}

}  // namespace

Checkpoint snapshot(const ad::ParamStore& store, const std::string& config_text,
                    int epoch, double best_map25) {
    Checkpoint c;
    c.epoch = epoch;
    c.best_map25 = best_map25;
    c.config_text = config_text;
    c.config_hash = fnv1a(config_text);
    c.tensors.reserve(store.entries.size());
    for (const auto& e : store.entries) c.tensors.push_back({e.name, e.value});
    return c;
}

void restore(const Checkpoint& ckpt, ad::ParamStore& store) {
    if (ckpt.tensors.size() != store.entries.size()) {
        throw ConfigError("checkpoint: parameter count mismatch");
    }
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        const NamedTensor& t = ckpt.tensors[i];
        auto& e = store.entries[i];
        if (t.name != e.name || !t.value.same_shape(e.value)) {
            throw ConfigError("checkpoint: mismatched parameter " + t.name);
        }
        e.value = t.value;
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << kMagic << "\n";
    out << "epoch " << ckpt.epoch << "\n";
    out << "best_map25 " << fmt(ckpt.best_map25) << "\n";
    char hash[24];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(ckpt.config_hash));
    out << "config_hash " << hash << "\n";
    out << "config_begin\n" << ckpt.config_text << "config_end\n";
    out << "tensors " << ckpt.tensors.size() << "\n";
    for (const auto& t : ckpt.tensors) {
        out << t.name << " " << t.value.rows << " " << t.value.cols << "\n";
        out.write(reinterpret_cast<const char*>(t.value.v.data()),
                  std::streamsize(t.value.v.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMagic) bad(path, "bad header");

    Checkpoint c;
    auto keyed = [&](const char* key) {
        if (!std::getline(in, line)) bad(path, std::string("missing ") + key);
        std::istringstream ls(line);
        std::string k, v;
        if (!(ls >> k >> v) || k != key) bad(path, std::string("expected ") + key);
        return v;
    };
    try {
        c.epoch = std::stoi(keyed("epoch"));
        c.best_map25 = std::stod(keyed("best_map25"));
        c.config_hash = std::stoull(keyed("config_hash"), nullptr, 16);
    } catch (const std::logic_error&) {
        bad(path, "malformed manifest value");
    }

    if (!std::getline(in, line) || line != "config_begin") bad(path, "missing config");
    while (std::getline(in, line) && line != "config_end") c.config_text += line + "\n";
    if (line != "config_end") bad(path, "unterminated config");
    if (c.config_hash != fnv1a(c.config_text)) bad(path, "config hash mismatch");

    std::size_t count = 0;
    try {
        count = std::stoul(keyed("tensors"));
    } catch (const std::logic_error&) {
        bad(path, "malformed tensor count");
    }
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) bad(path, "truncated tensor table");
        std::istringstream ls(line);
        NamedTensor t;
        int rows = 0, cols = 0;
        if (!(ls >> t.name >> rows >> cols) || rows <= 0 || cols <= 0) {
            bad(path, "bad tensor header: " + line);
        }
        t.value = Tensor(rows, cols);
        in.read(reinterpret_cast<char*>(t.value.v.data()),
                std::streamsize(t.value.v.size() * sizeof(double)));
        if (!in) bad(path, "truncated tensor data: " + t.name);
        c.tensors.push_back(std::move(t));
    }
    return c;
}

}  // namespace scenedet::ckpt

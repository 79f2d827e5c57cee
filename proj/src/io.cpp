#include "fragvqa/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fragvqa::io {

namespace {
constexpr char kMagic[8] = {'F', 'V', 'Q', 'T', '0', '0', '0', '1'};

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    return f;
}
}  // namespace

void save_tensor_archive(const std::string& path, const Archive& a) {
    Json header;
    header["meta"] = a.meta;
    Json dir = Json::array();
    for (const auto& [name, t] : a.tensors) {
        Json e;
        e["name"] = name;
        e["shape"] = t.shape();
        dir.push_back(e);
    }
    header["tensors"] = dir;
    std::string hs = header.dump();
    std::uint64_t hlen = hs.size();

    auto f = open_out(path);
    f.write(kMagic, sizeof(kMagic));
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : a.tensors) {
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(double))));
    }
    if (!f) throw IoError("write failed: " + path);
}

Archive load_tensor_archive(const std::string& path) {
    auto f = open_in(path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a tensor archive: " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw IoError("truncated archive header: " + path);
    Json header = Json::parse(hs);

    Archive a;
    a.meta = header.value("meta", Json::object());
    for (const auto& e : header.at("tensors")) {
        std::vector<std::int64_t> shape = e.at("shape").get<std::vector<std::int64_t>>();
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(double))));
        if (!f) throw IoError("truncated tensor payload: " + path);
        a.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    return a;
}

void save_clip_f32(const std::string& path, const Tensor& t) {
    auto f = open_out(path);
    std::vector<float> buf(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw IoError("write failed: " + path);
}

Tensor load_clip_f32(const std::string& path, const std::vector<std::int64_t>& shape) {
    auto f = open_in(path);
    Tensor t(shape);
    std::vector<float> buf(static_cast<std::size_t>(t.numel()));
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw IoError("clip payload truncated or missing: " + path);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(buf[static_cast<std::size_t>(i)]);
    return t;
}

Json load_json(const std::string& path) {
    auto f = open_in(path);
    try {
        return Json::parse(f);
    } catch (const std::exception& e) {
        throw IoError("bad JSON in " + path + ": " + e.what());
    }
}

void save_json(const std::string& path, const Json& j, int indent) {
    auto f = open_out(path);
    f << j.dump(indent) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

void save_text(const std::string& path, const std::string& text) {
    auto f = open_out(path);
    f << text;
    if (!f) throw IoError("write failed: " + path);
}

std::string json_fingerprint(const Json& j) {
    // dump() emits a canonical, whitespace-free encoding.
    std::uint64_t h = fnv1a64(j.dump());
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

}  // namespace fragvqa::io

#include "fdm/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

static_assert(std::endian::native == std::endian::little, "serialisation assumes a little-endian host");

namespace fdm {

void atomic_write(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        os.flush();
        if (!os) throw std::runtime_error("write to '" + tmp + "' failed");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

namespace {

class Writer {
public:
    template <typename V>
    void pod(const V& v) {
        buf_.append(reinterpret_cast<const char*>(&v), sizeof(V));
    }
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(const std::string& b) : b_(b) {}
    template <typename V>
    V pod() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, b_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }
    void bytes(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, b_.data() + pos_, n);
        pos_ += n;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    [[nodiscard]] bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw FormatError("truncated file");
    }
    const std::string& b_;
    std::size_t pos_ = 0;
};

constexpr std::uint32_t kTensorVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

void put_named(Writer& w, const std::string& name, const std::vector<int>& dims, const float* data, std::size_t n) {
    w.str(name);
    w.pod(static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) w.pod(static_cast<std::uint64_t>(d));
    w.bytes(data, n * sizeof(float));
}

ParamTensor<float> get_named(Reader& r) {
    ParamTensor<float> t;
    t.name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw FormatError("tensor '" + t.name + "' has implausible rank");
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto d = r.pod<std::uint64_t>();
        if (d > (1ULL << 31)) throw FormatError("tensor '" + t.name + "' has implausible extent");
        t.dims.push_back(static_cast<int>(d));
        n *= d;
    }
    t.value.resize(n);
    r.bytes(t.value.data(), n * sizeof(float));
    return t;
}

void put_group(Writer& w, const std::string& name, const ParamSet<float>& set) {
    w.str(name);
    w.pod(static_cast<std::uint32_t>(set.size()));
    for (const auto& t : set) put_named(w, t.name, t.dims, t.value.data(), t.value.size());
}

std::vector<ParamTensor<float>> get_group(Reader& r, const std::string& expect) {
    const std::string name = r.str();
    if (name != expect) throw FormatError("expected group '" + expect + "', found '" + name + "'");
    const auto n = r.pod<std::uint32_t>();
    std::vector<ParamTensor<float>> out;
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(get_named(r));
    return out;
}

ParamSet<float> to_set(std::vector<ParamTensor<float>> ts) {
    ParamSet<float> s;
    for (auto& t : ts) {
        const std::size_t i = s.add(t.name, t.dims);
        s[i].value = std::move(t.value);
    }
    return s;
}

std::vector<int> shape_dims(const Shape& s) { return {s.channels, s.height, s.width}; }

}  // namespace

std::string encode_tensor(const Tensor& t) {
    Writer w;
    w.bytes("FDMT", 4);
    w.pod(kTensorVersion);
    w.pod(std::uint32_t{3});
    w.pod(static_cast<std::uint64_t>(t.shape.channels));
    w.pod(static_cast<std::uint64_t>(t.shape.height));
    w.pod(static_cast<std::uint64_t>(t.shape.width));
    w.bytes(t.data.data(), t.data.size() * sizeof(float));
    return w.take();
}

Tensor decode_tensor(const std::string& bytes) {
    Reader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "FDMT", 4) != 0) throw FormatError("not a raw tensor file (bad magic)");
    const auto version = r.pod<std::uint32_t>();
    if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
    const auto rank = r.pod<std::uint32_t>();
    if (rank < 1 || rank > 3) throw FormatError("raw tensor rank must be 1..3");
    int dims[3] = {1, 1, 1};
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto d = r.pod<std::uint64_t>();
        if (d == 0 || d > (1ULL << 24)) throw FormatError("implausible tensor extent");
        dims[3 - rank + i] = static_cast<int>(d);
    }
    Tensor t(Shape{dims[0], dims[1], dims[2]});
    r.bytes(t.data.data(), t.data.size() * sizeof(float));
    if (!r.done()) throw FormatError("trailing bytes after tensor data");
    return t;
}

void write_tensor(const std::string& path, const Tensor& t) { atomic_write(path, encode_tensor(t)); }
Tensor read_tensor(const std::string& path) { return decode_tensor(read_file(path)); }

std::string encode_png(const Tensor& t) {
    const int C = t.shape.channels;
    if (C != 1 && C != 3) throw std::invalid_argument("PNG output needs 1 or 3 channels, got " + std::to_string(C));
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(t.shape.width);
    img.height = static_cast<png_uint_32>(t.shape.height);
    img.format = C == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<unsigned char> pix(t.shape.plane() * C);
    for (std::size_t i = 0; i < t.shape.plane(); ++i) {
        for (int c = 0; c < C; ++c) {
            const double v = (static_cast<double>(t.plane(c)[i]) + 1.0) * 127.5;
            pix[i * C + c] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, pix.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("PNG encode failed: ") + img.message);
    }
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, pix.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("PNG encode failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

void write_png(const std::string& path, const Tensor& t) { atomic_write(path, encode_png(t)); }

Tensor read_png(const std::string& path, int channels) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("PNG input needs 1 or 3 channels");
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw std::runtime_error("cannot read PNG '" + path + "': " + img.message);
    }
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<unsigned char> pix(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, pix.data(), 0, nullptr)) {
        png_image_free(&img);
        throw std::runtime_error("cannot decode PNG '" + path + "': " + img.message);
    }
    Tensor t(Shape{channels, static_cast<int>(img.height), static_cast<int>(img.width)});
    for (std::size_t i = 0; i < t.shape.plane(); ++i) {
        for (int c = 0; c < channels; ++c) t.plane(c)[i] = static_cast<float>(pix[i * channels + c] / 127.5 - 1.0);
    }
    return t;
}

Tensor contact_sheet(std::span<const Tensor> images, int cols, int pad) {
    if (images.empty()) throw std::invalid_argument("contact sheet needs images");
    const Shape s = images.front().shape;
    cols = std::max(1, std::min<int>(cols, static_cast<int>(images.size())));
    const int rows = static_cast<int>((images.size() + cols - 1) / cols);
    Tensor sheet(Shape{s.channels, rows * (s.height + pad) + pad, cols * (s.width + pad) + pad}, -1.0f);
    for (std::size_t n = 0; n < images.size(); ++n) {
        require_shape(images[n], s, "contact sheet image");
        const int oy = pad + static_cast<int>(n / cols) * (s.height + pad);
        const int ox = pad + static_cast<int>(n % cols) * (s.width + pad);
        for (int c = 0; c < s.channels; ++c) {
            for (int y = 0; y < s.height; ++y) {
                for (int x = 0; x < s.width; ++x) sheet.at(c, oy + y, ox + x) = images[n].at(c, y, x);
            }
        }
    }
    return sheet;
}

std::string encode_checkpoint(const Checkpoint& c) {
    Writer w;
    w.bytes("FDMC", 4);
    w.pod(kCheckpointVersion);
    w.pod(c.config_hash);
    w.str(c.config_text);
    w.pod(static_cast<std::uint64_t>(c.step));
    w.pod(static_cast<std::uint64_t>(c.skipped));
    put_group(w, "params", c.params);
    put_group(w, "ema", c.ema);
    put_group(w, "adam_m", c.adam_m);
    put_group(w, "adam_v", c.adam_v);

    ParamSet<float> tr;
    {
        const std::size_t i = tr.add("adapter_shapes", {static_cast<int>(c.adapter_shapes.size()), 3});
        for (std::size_t a = 0; a < c.adapter_shapes.size(); ++a) {
            tr[i].value[3 * a + 0] = static_cast<float>(c.adapter_shapes[a].channels);
            tr[i].value[3 * a + 1] = static_cast<float>(c.adapter_shapes[a].height);
            tr[i].value[3 * a + 2] = static_cast<float>(c.adapter_shapes[a].width);
        }
        const std::size_t g = tr.add("gammas", {static_cast<int>(c.gammas.size())});
        for (std::size_t k = 0; k < c.gammas.size(); ++k) tr[g].value[k] = static_cast<float>(c.gammas[k]);
    }
    if (c.autoencoder) {
        const auto& ae = *c.autoencoder;
        const std::size_t a = tr.add("ae.input_shape", {3});
        const std::size_t b = tr.add("ae.latent_shape", {3});
        const std::vector<int> in = shape_dims(ae.input_shape());
        const std::vector<int> lat = shape_dims(ae.latent_shape());
        for (int i = 0; i < 3; ++i) {
            tr[a].value[i] = static_cast<float>(in[i]);
            tr[b].value[i] = static_cast<float>(lat[i]);
        }
        const std::size_t e = tr.add("ae.encoder", {static_cast<int>(ae.latent_shape().size()),
                                                    static_cast<int>(ae.input_shape().size())});
        tr[e].value = ae.encoder();
        const std::size_t m = tr.add("ae.mean", {static_cast<int>(ae.input_shape().size())});
        tr[m].value = ae.mean();
    }
    put_group(w, "transform", tr);
    return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "FDMC", 4) != 0) throw FormatError("not a checkpoint file (bad magic)");
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.config_hash = r.pod<std::uint64_t>();
    c.config_text = r.str();
    c.step = static_cast<long>(r.pod<std::uint64_t>());
    c.skipped = static_cast<long>(r.pod<std::uint64_t>());
    c.params = to_set(get_group(r, "params"));
    c.ema = to_set(get_group(r, "ema"));
    c.adam_m = to_set(get_group(r, "adam_m"));
    c.adam_v = to_set(get_group(r, "adam_v"));
    const ParamSet<float> tr = to_set(get_group(r, "transform"));
    if (!r.done()) throw FormatError("trailing bytes after checkpoint");
    const auto& shapes = tr.get("adapter_shapes");
    for (std::size_t a = 0; 3 * a + 2 < shapes.value.size(); ++a) {
        c.adapter_shapes.push_back(Shape{static_cast<int>(shapes.value[3 * a]), static_cast<int>(shapes.value[3 * a + 1]),
                                         static_cast<int>(shapes.value[3 * a + 2])});
    }
    for (float g : tr.get("gammas").value) c.gammas.push_back(g);
    if (tr.contains("ae.encoder")) {
        auto shape_of = [&](const std::string& n) {
            const auto& v = tr.get(n).value;
            return Shape{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
        };
        c.autoencoder = std::make_shared<LinearAutoencoder>(shape_of("ae.input_shape"), shape_of("ae.latent_shape"),
                                                            tr.get("ae.encoder").value, tr.get("ae.mean").value);
    }
    if (!c.params.same_layout(c.ema) || !c.params.same_layout(c.adam_m) || !c.params.same_layout(c.adam_v)) {
        throw FormatError("checkpoint parameter groups disagree in layout");
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) { atomic_write(path, encode_checkpoint(c)); }
Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace fdm

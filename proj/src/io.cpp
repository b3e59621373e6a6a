#include "lrformer/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "lrformer/errors.hpp"

namespace lrf {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path + "' for reading");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open '" + path + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("write to '" + path + "' failed");
    }
}

namespace {

// Netpbm header: magic, width, height, maxval, one whitespace byte.
struct PnmHeader {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t payload = 0;  // byte offset of the first sample
};

bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

PnmHeader parse_pnm_header(const std::vector<std::uint8_t>& b, const char* magic, const char* kind) {
    auto fail = [kind](std::size_t at, const std::string& what) {
        throw FormatError(std::string(kind) + ": " + what + " at byte " + std::to_string(at));
    };
    if (b.size() < 2 || b[0] != magic[0] || b[1] != magic[1]) {
        fail(0, std::string("bad magic (expected ") + magic + ")");
    }
    std::size_t pos = 2;
    auto number = [&](const char* what) {
        while (pos < b.size()) {
            if (is_space(b[pos])) {
                ++pos;
            } else if (b[pos] == '#') {
                while (pos < b.size() && b[pos] != '\n') {
                    ++pos;
                }
            } else {
                break;
            }
        }
        if (pos >= b.size()) {
            fail(pos, std::string("truncated header, missing ") + what);
        }
        if (b[pos] < '0' || b[pos] > '9') {
            fail(pos, std::string("expected ") + what);
        }
        const std::size_t start = pos;
        std::size_t v = 0;
        while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
            v = v * 10 + (b[pos] - '0');
            if (v > (1u << 20)) {
                fail(start, std::string(what) + " too large");
            }
            ++pos;
        }
        return std::pair{v, start};
    };
    PnmHeader h;
    auto [w, wpos] = number("width");
    auto [hh, hpos] = number("height");
    auto [maxval, mpos] = number("maxval");
    if (w == 0) {
        fail(wpos, "zero width");
    }
    if (hh == 0) {
        fail(hpos, "zero height");
    }
    if (maxval != 255) {
        fail(mpos, "maxval " + std::to_string(maxval) + " is not 255");
    }
    if (pos >= b.size() || !is_space(b[pos])) {
        fail(pos, "missing whitespace after maxval");
    }
    h.width = w;
    h.height = hh;
    h.payload = pos + 1;
    return h;
}

void check_payload(const std::vector<std::uint8_t>& b, const PnmHeader& h, std::size_t channels, const char* kind) {
    const std::size_t need = h.width * h.height * channels;
    const std::size_t have = b.size() - h.payload;
    if (have < need) {
        throw FormatError(std::string(kind) + ": truncated payload, expected " + std::to_string(need) +
                          " bytes but file ends at byte " + std::to_string(b.size()));
    }
    if (have > need) {
        throw FormatError(std::string(kind) + ": trailing data at byte " + std::to_string(h.payload + need));
    }
}

std::vector<std::uint8_t> pnm_header(const char* magic, std::size_t w, std::size_t h) {
    const std::string s = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    return {s.begin(), s.end()};
}

}  // namespace

Tensor parse_ppm(const std::vector<std::uint8_t>& bytes) {
    const auto h = parse_pnm_header(bytes, "P6", "PPM");
    check_payload(bytes, h, 3, "PPM");
    Tensor img({3, h.height, h.width});
    auto d = img.data();
    const std::size_t plane = h.height * h.width;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            d[c * plane + i] = static_cast<float>(bytes[h.payload + 3 * i + c]) / 255.0f;
        }
    }
    return img;
}

Tensor read_image(const std::string& path) {
    try {
        return parse_ppm(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void write_image(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("write_image: expected [3,H,W], got " + shape_str(image.shape()));
    }
    const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
    auto out = pnm_header("P6", w, h);
    const std::size_t base = out.size();
    out.resize(base + 3 * plane);
    auto d = image.data();
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            const float v = std::clamp(d[c * plane + i], 0.0f, 1.0f);
            out[base + 3 * i + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    write_file(path, out);
}

LabelMap parse_pgm(const std::vector<std::uint8_t>& bytes, std::size_t num_classes) {
    const auto h = parse_pnm_header(bytes, "P5", "PGM");
    check_payload(bytes, h, 1, "PGM");
    LabelMap m{h.height, h.width, std::vector<std::int32_t>(h.height * h.width)};
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        const std::uint8_t v = bytes[h.payload + i];
        if (num_classes > 0 && v >= num_classes) {
            throw DataError("PGM: label " + std::to_string(v) + " at byte " + std::to_string(h.payload + i) +
                            " is not below " + std::to_string(num_classes) + " classes");
        }
        m.labels[i] = v;
    }
    return m;
}

LabelMap read_mask(const std::string& path, std::size_t num_classes) {
    try {
        return parse_pgm(read_file(path), num_classes);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_mask(const std::string& path, const LabelMap& mask) {
    if (mask.labels.size() != mask.height * mask.width || mask.labels.empty()) {
        throw DimensionError("write_mask: label count does not match extents");
    }
    auto out = pnm_header("P5", mask.width, mask.height);
    for (auto v : mask.labels) {
        if (v < 0 || v > 255) {
            throw DataError("write_mask: label " + std::to_string(v) + " does not fit in 8 bits");
        }
        out.push_back(static_cast<std::uint8_t>(v));
    }
    write_file(path, out);
}

namespace {

constexpr char kMagic[4] = {'L', 'R', 'F', 'W'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint32_t kMaxRank = 8;

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
  public:
    explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

    template <typename U>
    U get(const std::string& what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, b_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }

    void need(std::size_t n, const std::string& what) const {
        if (b_.size() - pos_ < n) {
            throw FormatError("weights: truncated " + what + " at byte " + std::to_string(pos_) + " (needs " +
                              std::to_string(n) + " bytes, " + std::to_string(b_.size() - pos_) + " left)");
        }
    }

    const std::uint8_t* take(std::size_t n, const std::string& what) {
        need(n, what);
        const auto* p = b_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return b_.size() - pos_; }

  private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ParamStore& store) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, kWeightFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, t] : store.entries()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<std::uint8_t>(out, kDtypeF32);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) {
            put<std::uint64_t>(out, e);
        }
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.data().data());
        out.insert(out.end(), p, p + 4 * t.numel());
    }
    return out;
}

ParamStore parse_weights(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    const auto* magic = r.take(4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("weights: bad magic at byte 0 (expected LRFW)");
    }
    const auto version = r.get<std::uint32_t>("version");
    if (version != kWeightFormatVersion) {
        throw FormatError("weights: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kWeightFormatVersion) + ")");
    }
    const auto count = r.get<std::uint32_t>("entry count");
    ParamStore store;
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string entry = "entry " + std::to_string(i);
        const auto len = r.get<std::uint32_t>(entry + " name length");
        const auto* np = r.take(len, entry + " name");
        const std::string name(reinterpret_cast<const char*>(np), len);
        const std::string label = entry + " '" + name + "'";
        if (name.empty() || !seen.insert(name).second) {
            throw FormatError("weights: " + label + " has an empty or duplicate name");
        }
        const auto dtype = r.get<std::uint8_t>(label + " dtype");
        if (dtype != kDtypeF32) {
            throw FormatError("weights: " + label + " has unknown dtype code " + std::to_string(dtype));
        }
        const auto rank = r.get<std::uint32_t>(label + " rank");
        if (rank > kMaxRank) {
            throw FormatError("weights: " + label + " has rank " + std::to_string(rank));
        }
        Shape shape(rank);
        std::uint64_t numel = 1;
        for (auto& e : shape) {
            const auto v = r.get<std::uint64_t>(label + " extents");
            if (v == 0 || numel > (std::uint64_t{1} << 40) / v) {
                throw FormatError("weights: " + label + " has an invalid extent " + std::to_string(v));
            }
            numel *= v;
            e = static_cast<std::size_t>(v);
        }
        const auto* vp = r.take(4 * numel, label + " values");
        std::vector<float> values(numel);
        std::memcpy(values.data(), vp, 4 * numel);
        store.add(name, Tensor(shape, std::move(values)));
    }
    if (r.remaining() != 0) {
        throw FormatError("weights: " + std::to_string(r.remaining()) + " trailing bytes at byte " +
                          std::to_string(r.pos()) + " after " + std::to_string(count) + " entries");
    }
    return store;
}

void save_weights(const ParamStore& store, const std::string& path) {
    write_file(path, serialize_weights(store));
}

ParamStore load_weights(const std::string& path) {
    try {
        return parse_weights(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void assign_weights(ParamStore& target, const ParamStore& loaded) {
    if (target.size() != loaded.size()) {
        throw FormatError("weights: file has " + std::to_string(loaded.size()) + " entries, model expects " +
                          std::to_string(target.size()));
    }
    for (std::size_t i = 0; i < target.size(); ++i) {
        auto& [name, t] = target.entries()[i];
        const auto& [lname, lt] = loaded.entries()[i];
        if (name != lname) {
            throw FormatError("weights: entry " + std::to_string(i) + " is '" + lname + "', model expects '" + name +
                              "'");
        }
        if (t.shape() != lt.shape()) {
            throw FormatError("weights: shape mismatch for '" + name + "': file " + shape_str(lt.shape()) +
                              ", model " + shape_str(t.shape()));
        }
        std::copy(lt.data().begin(), lt.data().end(), t.data().begin());
    }
}

Model load_model(const VariantSpec& spec, const std::string& path) {
    Model m{spec, {}};
    declare_params(m.params, spec);
    const auto loaded = load_weights(path);
    try {
        assign_weights(m.params, loaded);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
    return m;
}

}  // namespace lrf

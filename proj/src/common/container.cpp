#include "metadapt/common/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "metadapt/common/error.hpp"

namespace metadapt {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'T', 'A', 'D', 'A', 'P', 'T'};

template <typename T>
void write_le(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

void write_str(std::string& out, const std::string& s) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

class Reader {
  public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T read() {
        need(sizeof(T));
        unsigned char raw[sizeof(T)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }

    std::string read_str() {
        const auto n = read<std::uint32_t>();
        need(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    void expect_magic() {
        need(sizeof(kMagic));
        check(std::memcmp(bytes_.data(), kMagic, sizeof(kMagic)) == 0, "format", "container: bad magic");
        pos_ += sizeof(kMagic);
    }

    bool done() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n) const {
        check(pos_ + n <= bytes_.size(), "format", "container: truncated input at byte ", pos_);
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void Container::set_int(const std::string& key, std::int64_t value) {
    for (auto& [k, v] : ints_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    ints_.emplace_back(key, value);
}

std::int64_t Container::get_int(const std::string& key) const {
    for (const auto& [k, v] : ints_)
        if (k == key) return v;
    fail("format", "container: missing integer field '", key, "'");
}

bool Container::has_int(const std::string& key) const {
    for (const auto& kv : ints_)
        if (kv.first == key) return true;
    return false;
}

void Container::set_text(const std::string& key, const std::string& value) {
    for (auto& [k, v] : texts_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    texts_.emplace_back(key, value);
}

const std::string& Container::get_text(const std::string& key) const {
    for (const auto& [k, v] : texts_)
        if (k == key) return v;
    fail("format", "container: missing text field '", key, "'");
}

bool Container::has_text(const std::string& key) const {
    for (const auto& kv : texts_)
        if (kv.first == key) return true;
    return false;
}

void Container::put(const std::string& name, std::vector<std::size_t> shape, std::vector<double> data) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    check(n == data.size(), "shape_mismatch", "container: array '", name, "' has ", data.size(),
          " values but its shape holds ", n);
    if (!arrays_.contains(name)) array_order_.push_back(name);
    arrays_[name] = Array{std::move(shape), std::move(data)};
}

const Array& Container::at(const std::string& name) const {
    auto it = arrays_.find(name);
    check(it != arrays_.end(), "format", "container: missing array '", name, "'");
    return it->second;
}

bool Container::contains(const std::string& name) const { return arrays_.contains(name); }

std::string Container::serialize() const {
    std::string out(kMagic, sizeof(kMagic));
    write_le<std::uint32_t>(out, kVersion);
    write_le<std::uint32_t>(out, num_classes);
    write_le<std::uint32_t>(out, num_banks);
    write_str(out, kind);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ints_.size()));
    for (const auto& [k, v] : ints_) {
        write_str(out, k);
        write_le<std::int64_t>(out, v);
    }
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(texts_.size()));
    for (const auto& [k, v] : texts_) {
        write_str(out, k);
        write_str(out, v);
    }
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(array_order_.size()));
    for (const auto& name : array_order_) {
        const Array& a = arrays_.at(name);
        write_str(out, name);
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) write_le<std::uint64_t>(out, d);
    }
    for (const auto& name : array_order_)
        for (double v : arrays_.at(name).data) write_le<double>(out, v);
    return out;
}

Container Container::deserialize(std::string_view bytes) {
    Reader in(bytes);
    in.expect_magic();
    const auto version = in.read<std::uint32_t>();
    check(version == kVersion, "format", "container: unsupported version ", version);
    Container c;
    c.num_classes = in.read<std::uint32_t>();
    c.num_banks = in.read<std::uint32_t>();
    c.kind = in.read_str();
    const auto n_ints = in.read<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_ints; ++i) {
        auto key = in.read_str();
        c.set_int(key, in.read<std::int64_t>());
    }
    const auto n_texts = in.read<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_texts; ++i) {
        auto key = in.read_str();
        c.set_text(key, in.read_str());
    }
    const auto n_arrays = in.read<std::uint32_t>();
    std::vector<std::pair<std::string, std::vector<std::size_t>>> manifest;
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        auto name = in.read_str();
        const auto rank = in.read<std::uint32_t>();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(in.read<std::uint64_t>());
        manifest.emplace_back(std::move(name), std::move(shape));
    }
    for (auto& [name, shape] : manifest) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<double> data(n);
        for (auto& v : data) v = in.read<double>();
        c.put(name, shape, std::move(data));
    }
    check(in.done(), "format", "container: trailing bytes");
    return c;
}

void Container::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    check(static_cast<bool>(os), "io", "cannot open '", path.string(), "' for writing");
    const std::string bytes = serialize();
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    check(static_cast<bool>(os), "io", "write failed for '", path.string(), "'");
}

Container Container::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    check(static_cast<bool>(is), "missing_artifact", "cannot open '", path.string(), "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return deserialize(ss.str());
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_doubles(const std::vector<double>& values, std::uint64_t seed) {
    return fnv1a(std::string_view(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double)),
                 seed);
}

}  // namespace metadapt

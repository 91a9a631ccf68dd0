#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace metadapt {

/// A named double-precision array.
struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

/// Flat binary container shared by checkpoints, centroid files and dataset
/// splits.
///
/// Layout (all integers and reals little-endian):
///
///     magic        8 bytes  "METADAPT"
///     version      u32      (currently 1)
///     num_classes  u32      M
///     num_banks    u32      K (sub-target banks; the file holds K+1 with source)
///     kind         str      u32 length + UTF-8 bytes
///     n_ints       u32      then n_ints x (str key, i64 value)
///     n_texts      u32      then n_texts x (str key, str value)
///     n_arrays     u32      manifest: n_arrays x (str name, u32 rank, rank x u64 dim)
///     payload               arrays in manifest order, prod(dims) x f64 each
///
/// Entries keep insertion order, so identical inputs serialize to identical
/// bytes.
class Container {
  public:
    static constexpr std::uint32_t kVersion = 1;

    std::string kind;
    std::uint32_t num_classes = 0;
    std::uint32_t num_banks = 0;

    void set_int(const std::string& key, std::int64_t value);
    std::int64_t get_int(const std::string& key) const;
    bool has_int(const std::string& key) const;

    void set_text(const std::string& key, const std::string& value);
    const std::string& get_text(const std::string& key) const;
    bool has_text(const std::string& key) const;

    void put(const std::string& name, std::vector<std::size_t> shape, std::vector<double> data);
    const Array& at(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::string>& names() const { return array_order_; }

    std::string serialize() const;
    static Container deserialize(std::string_view bytes);

    void save(const std::filesystem::path& path) const;
    static Container load(const std::filesystem::path& path);

  private:
    std::vector<std::pair<std::string, std::int64_t>> ints_;
    std::vector<std::pair<std::string, std::string>> texts_;
    std::vector<std::string> array_order_;
    std::map<std::string, Array> arrays_;
};

/// FNV-1a over raw bytes; used for bit-identity checks.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_doubles(const std::vector<double>& values, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace metadapt

#include "metadapt/synthdata/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "metadapt/common/container.hpp"
#include "metadapt/common/error.hpp"
#include "metadapt/common/rng.hpp"

namespace metadapt::synthdata {

namespace {

using autodiff::Tensor;
using nlohmann::json;

constexpr double kBaseColor[4][3] = {
    {0.50, 0.50, 0.50},  // background (grey level drawn per scene)
    {0.80, 0.30, 0.25},  // box
    {0.30, 0.75, 0.30},  // disk
    {0.30, 0.35, 0.80},  // stripe
};
constexpr double kColorJitter = 0.08;
constexpr double kTextureSigma = 0.02;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void draw_color(Rng& rng, SceneClass kind, double rgb[3]) {
    const auto& base = kBaseColor[static_cast<int>(kind)];
    for (int c = 0; c < 3; ++c) rgb[c] = clamp01(base[c] + rng.uniform(-kColorJitter, kColorJitter));
}

ShapeSpec draw_shape(Rng& rng, SceneClass kind, double width, double height) {
    ShapeSpec s;
    s.kind = kind;
    switch (kind) {
        case SceneClass::Box:
            s.w = rng.uniform(6.0, 14.0);
            s.h = rng.uniform(6.0, 14.0);
            s.x0 = rng.uniform(0.0, width - s.w);
            s.y0 = rng.uniform(0.0, height - s.h);
            break;
        case SceneClass::Disk:
            s.r = rng.uniform(3.0, 7.0);
            s.cx = rng.uniform(s.r, width - s.r);
            s.cy = rng.uniform(s.r, height - s.r);
            break;
        case SceneClass::Stripe:
            s.angle = rng.uniform(0.0, std::numbers::pi);
            s.half_width = rng.uniform(1.5, 3.0);
            s.cx = rng.uniform(0.25 * width, 0.75 * width);
            s.cy = rng.uniform(0.25 * height, 0.75 * height);
            break;
        case SceneClass::Background:
            break;
    }
    draw_color(rng, kind, s.rgb);
    return s;
}

Scene render(Rng& rng, std::size_t height, std::size_t width) {
    Scene scene;
    scene.height = height;
    scene.width = width;
    const std::size_t plane = height * width;
    scene.image.assign(3 * plane, 0.0);
    scene.labels.assign(plane, 0);

    const double grey = rng.uniform(0.35, 0.65);
    double bg[3];
    for (int c = 0; c < 3; ++c) bg[c] = clamp01(grey + rng.uniform(-0.04, 0.04));

    std::vector<SceneClass> kinds;
    if (rng.uniform() < 0.6) kinds.push_back(SceneClass::Stripe);
    for (std::size_t i = 0, n = 1 + rng.index(2); i < n; ++i) kinds.push_back(SceneClass::Box);
    for (std::size_t i = 0, n = 1 + rng.index(2); i < n; ++i) kinds.push_back(SceneClass::Disk);
    rng.shuffle(kinds);
    for (SceneClass k : kinds) scene.shapes.push_back(draw_shape(rng, k, double(width), double(height)));

    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double px = double(x) + 0.5, py = double(y) + 0.5;
            const double* rgb = bg;
            std::uint8_t label = 0;
            for (const auto& s : scene.shapes) {
                if (covers(s, px, py)) {
                    rgb = s.rgb;
                    label = static_cast<std::uint8_t>(s.kind);
                }
            }
            const std::size_t p = y * width + x;
            scene.labels[p] = label;
            for (int c = 0; c < 3; ++c) scene.image[c * plane + p] = clamp01(rgb[c] + kTextureSigma * rng.normal());
        }
    }
    return scene;
}

bool has_two_classes(const Scene& scene) {
    for (auto l : scene.labels)
        if (l != scene.labels.front()) return true;
    return false;
}

void transform_in_place(std::vector<double>& img, std::size_t plane, const StyleTransform& t, std::uint64_t seed) {
    const auto& p = t.params;
    auto need = [&](std::size_t n) {
        check(p.size() == n, "invalid_argument", style_name(t.kind), " expects ", n, " parameter(s), got ", p.size());
    };
    switch (t.kind) {
        case StyleKind::Identity:
            need(0);
            break;
        case StyleKind::Gamma:
            need(1);
            check(p[0] > 0.0, "invalid_argument", "gamma must be positive");
            for (double& v : img) v = std::pow(v, p[0]);
            break;
        case StyleKind::ColorCast:
            need(3);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < plane; ++i) img[c * plane + i] *= p[c];
            break;
        case StyleKind::AdditiveNoise: {
            need(1);
            Rng rng(seed);
            for (double& v : img) v += p[0] * rng.normal();
            break;
        }
        case StyleKind::Desaturate:
            need(1);
            for (std::size_t i = 0; i < plane; ++i) {
                const double y = 0.299 * img[i] + 0.587 * img[plane + i] + 0.114 * img[2 * plane + i];
                for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = (1.0 - p[0]) * img[c * plane + i] + p[0] * y;
            }
            break;
        case StyleKind::Contrast:
            need(1);
            for (double& v : img) v = (v - 0.5) * p[0] + 0.5;
            break;
    }
    for (double& v : img) v = clamp01(v);
}

void check_weights(const std::vector<DomainSpec>& specs, const char* what) {
    double total = 0.0;
    for (const auto& d : specs) {
        check(d.weight > 0.0, "invalid_argument", what, " domain '", d.name, "' has non-positive weight");
        total += d.weight;
    }
    check(std::abs(total - 1.0) < 1e-9, "invalid_argument", what, " weights sum to ", total, ", expected 1");
}

// Stream ids per split.
constexpr std::uint64_t kSourceStream = 1;
constexpr std::uint64_t kTargetStream = 2;
constexpr std::uint64_t kOpenStreamBase = 100;

struct Drawn {
    Scene scene;
    std::uint32_t domain;
};

Drawn draw_sample(std::uint64_t split_seed, std::size_t index, const std::vector<DomainSpec>& domains,
                  const SceneConfig& config) {
    const std::uint64_t s = derive_seed(split_seed, index);
    std::vector<double> weights;
    for (const auto& d : domains) weights.push_back(d.weight);
    Rng pick(derive_seed(s, 1));
    const auto domain = static_cast<std::uint32_t>(pick.categorical(weights));
    Scene scene = apply_style(gen_scene(derive_seed(s, 0), config), domains[domain].transforms, derive_seed(s, 2));
    return {std::move(scene), domain};
}

void append(ImageSet& images, LabelSet* labels, const Scene& scene) {
    images.count += 1;
    images.height = scene.height;
    images.width = scene.width;
    images.images.insert(images.images.end(), scene.image.begin(), scene.image.end());
    if (labels) {
        labels->count += 1;
        labels->height = scene.height;
        labels->width = scene.width;
        labels->labels.insert(labels->labels.end(), scene.labels.begin(), scene.labels.end());
    }
}

json transform_to_json(const StyleTransform& t) { return {{"kind", style_name(t.kind)}, {"params", t.params}}; }

StyleTransform transform_from_json(const json& j) {
    return {parse_style_kind(j.at("kind").get<std::string>()), j.at("params").get<std::vector<double>>()};
}

json domain_to_json(const DomainSpec& d) {
    json transforms = json::array();
    for (const auto& t : d.transforms) transforms.push_back(transform_to_json(t));
    return {{"name", d.name}, {"weight", d.weight}, {"transforms", transforms}};
}

DomainSpec domain_from_json(const json& j) {
    DomainSpec d;
    d.name = j.at("name").get<std::string>();
    d.weight = j.value("weight", 1.0);
    for (const auto& t : j.at("transforms")) d.transforms.push_back(transform_from_json(t));
    return d;
}

json spec_json(const DatasetSpec& spec) {
    json compound = json::array(), open = json::array();
    for (const auto& d : spec.compound) compound.push_back(domain_to_json(d));
    for (const auto& d : spec.open) open.push_back(domain_to_json(d));
    return {
        {"seed", spec.seed},
        {"scene", {{"height", spec.scene.height}, {"width", spec.scene.width}}},
        {"counts",
         {{"source", spec.counts.source}, {"target", spec.counts.target}, {"open_per_domain", spec.counts.open_per_domain}}},
        {"source", domain_to_json(spec.source)},
        {"compound", compound},
        {"open", open},
    };
}

DatasetSpec spec_from(const json& j) {
    DatasetSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("scene")) {
        spec.scene.height = j["scene"].value("height", spec.scene.height);
        spec.scene.width = j["scene"].value("width", spec.scene.width);
    }
    const auto& c = j.at("counts");
    spec.counts.source = c.at("source").get<std::size_t>();
    spec.counts.target = c.at("target").get<std::size_t>();
    spec.counts.open_per_domain = c.value("open_per_domain", std::size_t{0});
    if (j.contains("source")) spec.source = domain_from_json(j["source"]);
    for (const auto& d : j.at("compound")) spec.compound.push_back(domain_from_json(d));
    if (j.contains("open"))
        for (const auto& d : j["open"]) spec.open.push_back(domain_from_json(d));
    return spec;
}

std::vector<double> to_doubles(const std::vector<std::uint8_t>& v) { return {v.begin(), v.end()}; }

std::vector<std::uint8_t> to_bytes(const std::vector<double>& v) {
    std::vector<std::uint8_t> out;
    out.reserve(v.size());
    for (double d : v) out.push_back(static_cast<std::uint8_t>(d));
    return out;
}

void put_images(Container& c, const ImageSet& s) {
    c.put("images", {s.count, 3, s.height, s.width}, s.images);
}

ImageSet get_images(const Container& c) {
    const Array& a = c.at("images");
    check(a.shape.size() == 4 && a.shape[1] == 3, "format", "images array must be (N,3,H,W)");
    return {a.shape[0], a.shape[2], a.shape[3], a.data};
}

void put_labels(Container& c, const LabelSet& s) { c.put("labels", {s.count, s.height, s.width}, to_doubles(s.labels)); }

LabelSet get_labels(const Container& c) {
    const Array& a = c.at("labels");
    check(a.shape.size() == 3, "format", "labels array must be (N,H,W)");
    return {a.shape[0], a.shape[1], a.shape[2], to_bytes(a.data)};
}

Container split_container(const std::string& kind) {
    Container c;
    c.kind = kind;
    c.num_classes = kNumClasses;
    return c;
}

std::filesystem::path require(const std::filesystem::path& p) {
    check(std::filesystem::exists(p), "missing_artifact", "dataset file not found: ", p.string());
    return p;
}

}  // namespace

bool covers(const ShapeSpec& s, double px, double py) {
    switch (s.kind) {
        case SceneClass::Box:
            return px >= s.x0 && px < s.x0 + s.w && py >= s.y0 && py < s.y0 + s.h;
        case SceneClass::Disk: {
            const double dx = px - s.cx, dy = py - s.cy;
            return dx * dx + dy * dy <= s.r * s.r;
        }
        case SceneClass::Stripe:
            return std::abs((px - s.cx) * std::cos(s.angle) + (py - s.cy) * std::sin(s.angle)) <= s.half_width;
        case SceneClass::Background:
            return false;
    }
    return false;
}

Scene gen_scene(std::uint64_t seed, const SceneConfig& config) {
    check(config.height >= 8 && config.width >= 8, "invalid_argument", "scene must be at least 8x8");
    Rng rng(seed);
    // Rejection keeps the two-class invariant; with the default geometry the
    // first draw essentially always satisfies it.
    for (;;) {
        Scene scene = render(rng, config.height, config.width);
        if (has_two_classes(scene)) return scene;
    }
}

std::string style_name(StyleKind kind) {
    switch (kind) {
        case StyleKind::Identity: return "identity";
        case StyleKind::Gamma: return "gamma";
        case StyleKind::ColorCast: return "color_cast";
        case StyleKind::AdditiveNoise: return "additive_noise";
        case StyleKind::Desaturate: return "desaturate";
        case StyleKind::Contrast: return "contrast";
    }
    return "unknown";
}

StyleKind parse_style_kind(const std::string& name) {
    for (auto k : {StyleKind::Identity, StyleKind::Gamma, StyleKind::ColorCast, StyleKind::AdditiveNoise,
                   StyleKind::Desaturate, StyleKind::Contrast})
        if (style_name(k) == name) return k;
    fail("invalid_argument", "unknown style transform '", name, "'");
}

Scene apply_style(const Scene& scene, const StyleTransform& transform, std::uint64_t seed) {
    Scene out = scene;
    transform_in_place(out.image, scene.height * scene.width, transform, seed);
    return out;
}

Scene apply_style(const Scene& scene, const std::vector<StyleTransform>& chain, std::uint64_t seed) {
    Scene out = scene;
    for (std::size_t i = 0; i < chain.size(); ++i)
        transform_in_place(out.image, scene.height * scene.width, chain[i], derive_seed(seed, i));
    return out;
}

DatasetSpec default_benchmark(std::uint64_t seed) {
    DatasetSpec spec;
    spec.seed = seed;
    spec.counts = {400, 300, 60};
    const double third = 1.0 / 3.0;
    spec.compound = {
        {"gamma", {StyleTransform::gamma(0.5)}, third},
        {"blue_cast", {StyleTransform::color_cast(0.75, 0.85, 1.35)}, third},
        {"noise", {StyleTransform::additive_noise(0.08)}, 1.0 - 2.0 * third},
    };
    spec.open = {{"faded", {StyleTransform::desaturate(0.7), StyleTransform::contrast(0.6)}, 1.0}};
    return spec;
}

Tensor ImageSet::batch(const std::vector<std::size_t>& indices) const {
    const std::size_t sz = image_size();
    std::vector<double> out;
    out.reserve(indices.size() * sz);
    for (std::size_t i : indices) {
        check(i < count, "invalid_argument", "image index ", i, " out of range (", count, " images)");
        out.insert(out.end(), images.begin() + i * sz, images.begin() + (i + 1) * sz);
    }
    return Tensor::constant({indices.size(), 3, height, width}, std::move(out));
}

Tensor LabelSet::batch(const std::vector<std::size_t>& indices) const {
    const std::size_t sz = height * width;
    std::vector<double> out;
    out.reserve(indices.size() * sz);
    for (std::size_t i : indices) {
        check(i < count, "invalid_argument", "label index ", i, " out of range (", count, " samples)");
        out.insert(out.end(), labels.begin() + i * sz, labels.begin() + (i + 1) * sz);
    }
    return Tensor::constant({indices.size(), height, width}, std::move(out));
}

Dataset make_dataset(const DatasetSpec& spec) {
    check(spec.counts.source > 0, "invalid_argument", "source count must be positive");
    check(spec.counts.target > 0, "invalid_argument", "target count must be positive");
    check(!spec.compound.empty(), "invalid_argument", "compound spec is empty");
    check(spec.open.empty() || spec.counts.open_per_domain > 0, "invalid_argument",
          "open_per_domain must be positive when open domains are given");
    check_weights(spec.compound, "compound");

    Dataset ds;
    ds.spec = spec;
    const std::vector<DomainSpec> source_domains{{spec.source.name, spec.source.transforms, 1.0}};

    const std::uint64_t source_seed = derive_seed(spec.seed, kSourceStream);
    for (std::size_t i = 0; i < spec.counts.source; ++i)
        append(ds.source.images, &ds.source.labels, draw_sample(source_seed, i, source_domains, spec.scene).scene);

    TargetTruth truth;
    const std::uint64_t target_seed = derive_seed(spec.seed, kTargetStream);
    for (std::size_t i = 0; i < spec.counts.target; ++i) {
        Drawn d = draw_sample(target_seed, i, spec.compound, spec.scene);
        append(ds.target, &truth.labels, d.scene);
        truth.provenance.push_back(d.domain);
    }
    ds.target_truth = Sealed<TargetTruth>(std::move(truth));

    for (std::size_t o = 0; o < spec.open.size(); ++o) {
        const std::vector<DomainSpec> domain{{spec.open[o].name, spec.open[o].transforms, 1.0}};
        const std::uint64_t open_seed = derive_seed(spec.seed, kOpenStreamBase + o);
        OpenSet set;
        set.name = spec.open[o].name;
        LabelSet labels;
        for (std::size_t i = 0; i < spec.counts.open_per_domain; ++i)
            append(set.images, &labels, draw_sample(open_seed, i, domain, spec.scene).scene);
        set.labels = Sealed<LabelSet>(std::move(labels));
        ds.open.push_back(std::move(set));
    }
    return ds;
}

std::string spec_to_json(const DatasetSpec& spec) { return spec_json(spec).dump(2); }

DatasetSpec spec_from_json(const std::string& text) {
    try {
        return spec_from(json::parse(text));
    } catch (const json::exception& e) {
        fail("format", "invalid dataset spec: ", e.what());
    }
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const EvalKey key("dataset export");
    fs::create_directories(dir / "eval");

    Container source = split_container("dataset:source");
    put_images(source, ds.source.images);
    put_labels(source, ds.source.labels);
    source.save(dir / "source.bin");

    Container target = split_container("dataset:target");
    put_images(target, ds.target);
    target.save(dir / "target.bin");

    const TargetTruth& truth = ds.target_truth.reveal(key);
    Container target_eval = split_container("dataset:target_eval");
    put_labels(target_eval, truth.labels);
    target_eval.put("provenance", {truth.provenance.size()},
                    std::vector<double>(truth.provenance.begin(), truth.provenance.end()));
    target_eval.save(dir / "eval" / "target.bin");

    json files = {{"source", "source.bin"}, {"target", "target.bin"}};
    json eval_only = {"eval/target.bin"};
    json open_names = json::array();
    for (const auto& o : ds.open) {
        Container c = split_container("dataset:open");
        c.set_text("name", o.name);
        put_images(c, o.images);
        c.save(dir / ("open_" + o.name + ".bin"));
        Container e = split_container("dataset:open_eval");
        e.set_text("name", o.name);
        put_labels(e, o.labels.reveal(key));
        e.save(dir / "eval" / ("open_" + o.name + ".bin"));
        open_names.push_back(o.name);
        eval_only.push_back("eval/open_" + o.name + ".bin");
    }

    json manifest = {
        {"format", "metadapt-dataset"},
        {"version", 1},
        {"spec", spec_json(ds.spec)},
        {"files", files},
        {"open", open_names},
        {"eval_only", eval_only},
        {"note", "files under eval/ hold labels and provenance for evaluation only"},
    };
    std::ofstream out(dir / "manifest.json");
    check(bool(out), "io", "cannot write ", (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(require(dir / "manifest.json"));
    std::stringstream buf;
    buf << in.rdbuf();
    json manifest;
    try {
        manifest = json::parse(buf.str());
    } catch (const json::exception& e) {
        fail("format", "invalid dataset manifest: ", e.what());
    }

    Dataset ds;
    ds.spec = spec_from(manifest.at("spec"));

    const Container source = Container::load(require(dir / "source.bin"));
    ds.source.images = get_images(source);
    ds.source.labels = get_labels(source);
    ds.target = get_images(Container::load(require(dir / "target.bin")));

    const Container target_eval = Container::load(require(dir / "eval" / "target.bin"));
    TargetTruth truth;
    truth.labels = get_labels(target_eval);
    for (double d : target_eval.at("provenance").data) truth.provenance.push_back(static_cast<std::uint32_t>(d));
    ds.target_truth = Sealed<TargetTruth>(std::move(truth));

    for (const auto& name : manifest.at("open")) {
        const std::string n = name.get<std::string>();
        OpenSet set;
        set.name = n;
        set.images = get_images(Container::load(require(dir / ("open_" + n + ".bin"))));
        set.labels = Sealed<LabelSet>(get_labels(Container::load(require(dir / "eval" / ("open_" + n + ".bin")))));
        ds.open.push_back(std::move(set));
    }
    return ds;
}

}  // namespace metadapt::synthdata

#include "residua/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "residua/errors.hpp"

namespace residua {

namespace {

constexpr char kMagic[8] = {'A', 'E', 'C', 'K', 'P', 'T', '0', '1'};

LayerSpec conv(std::string name, int kernel, int stride, int filters,
               std::vector<std::string> sources, bool normalized = true) {
    return LayerSpec{std::move(name), LayerKind::Conv, kernel, stride, filters,
                     std::move(sources), normalized};
}

LayerSpec convt(std::string name, int kernel, int stride, int filters,
                std::vector<std::string> sources) {
    return LayerSpec{std::move(name), LayerKind::ConvTranspose, kernel, stride, filters,
                     std::move(sources), true};
}

// Spatial scale of a layer output relative to the network input, as a
// reduced fraction num/den.
struct Scale {
    long long num = 1, den = 1;
    void reduce() {
        const long long g = std::gcd(num, den);
        num /= g;
        den /= g;
    }
    bool operator==(const Scale&) const = default;
};

int resolve_source(const std::string& src, const std::map<std::string, int>& index,
                   const std::string& layer) {
    if (src == "input") return -1;
    auto it = index.find(src);
    if (it == index.end()) {
        throw ValueError("architecture: layer '" + layer + "' references unknown source '" + src +
                         "'");
    }
    return it->second;
}

void accumulate(Tensor4& slot, Tensor4&& g) {
    if (slot.data.empty()) {
        slot = std::move(g);
        return;
    }
    if (!(slot.shape == g.shape)) {
        throw ShapeError("backward: conflicting gradient shapes for one layer output");
    }
    for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
}

Tensor4 slice_channels(const Tensor4& x, int from, int count) {
    Tensor4 out(x.shape.n, count, x.shape.h, x.shape.w);
    const std::size_t plane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
    for (int n = 0; n < x.shape.n; ++n) {
        std::memcpy(out.plane(n, 0), x.plane(n, from), plane * count * sizeof(float));
    }
    return out;
}

void put_bytes(std::string& buf, const void* p, std::size_t len) {
    buf.append(static_cast<const char*>(p), len);
}

void put_u16(std::string& buf, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    put_bytes(buf, b, 2);
}

void put_u32(std::string& buf, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    put_bytes(buf, b, 4);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size()) {
            throw FormatError(std::string("checkpoint: truncated while reading ") + what);
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

ArchitectureSpec build_default_architecture() {
    ArchitectureSpec arch;
    arch.input_channels = 1;
    arch.downsample_factor = 8;
    arch.layers = {
        conv("x1", 11, 2, 32, {"input"}),
        conv("x2", 9, 2, 64, {"x1"}),
        conv("x3", 7, 2, 128, {"x2"}),
        conv("x4", 5, 1, 128, {"x3"}),
        conv("x5", 3, 1, 128, {"x4"}),
        convt("x6", 3, 1, 128, {"x5"}),
        convt("x7", 5, 2, 128, {"x6", "x3"}),
        convt("x8", 7, 2, 64, {"x7", "x2"}),
        convt("x9", 9, 2, 32, {"x8", "x1"}),
        conv("out", 11, 1, 1, {"x9"}, false),
    };
    return arch;
}

void validate_architecture(const ArchitectureSpec& arch) {
    if (arch.layers.empty()) throw ValueError("architecture: no layers");
    if (arch.input_channels < 1) throw ValueError("architecture: input_channels must be >= 1");

    std::map<std::string, int> index;
    std::vector<Scale> scales(arch.layers.size());
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        if (l.name.empty() || l.name == "input") {
            throw ValueError("architecture: invalid layer name '" + l.name + "'");
        }
        if (index.count(l.name)) {
            throw ValueError("architecture: duplicate layer name '" + l.name + "'");
        }
        if (l.kernel < 1 || l.kernel % 2 == 0) {
            throw ValueError("architecture: layer '" + l.name + "' kernel must be odd, got " +
                             std::to_string(l.kernel));
        }
        if (l.stride < 1) throw ValueError("architecture: layer '" + l.name + "' stride < 1");
        if (l.filters < 1) throw ValueError("architecture: layer '" + l.name + "' filters < 1");
        if (l.input_sources.empty() || l.input_sources.size() > 2) {
            throw ValueError("architecture: layer '" + l.name + "' needs one or two sources");
        }

        Scale in_scale;
        bool first = true;
        for (const std::string& src : l.input_sources) {
            const int s = resolve_source(src, index, l.name);
            const Scale sc = s < 0 ? Scale{} : scales[static_cast<std::size_t>(s)];
            if (first) {
                in_scale = sc;
                first = false;
            } else if (!(in_scale == sc)) {
                throw ValueError("architecture: layer '" + l.name +
                                 "' concatenates sources of different spatial size");
            }
        }

        Scale out_scale = in_scale;
        if (l.kind == LayerKind::Conv) {
            out_scale.den *= l.stride;
        } else {
            out_scale.num *= l.stride;
        }
        out_scale.reduce();
        scales[i] = out_scale;
        index[l.name] = static_cast<int>(i);
    }

    if (!(scales.back() == Scale{})) {
        throw ValueError("architecture: stride composition does not restore the input size");
    }
    if (arch.layers.back().filters != arch.input_channels) {
        throw ValueError("architecture: final layer emits " +
                         std::to_string(arch.layers.back().filters) + " channels, input has " +
                         std::to_string(arch.input_channels));
    }
}

std::vector<int> layer_in_channels(const ArchitectureSpec& arch) {
    std::map<std::string, int> filters;
    std::vector<int> in_c;
    in_c.reserve(arch.layers.size());
    for (const LayerSpec& l : arch.layers) {
        int c = 0;
        for (const std::string& src : l.input_sources) {
            if (src == "input") {
                c += arch.input_channels;
            } else {
                auto it = filters.find(src);
                if (it == filters.end()) {
                    throw ValueError("architecture: layer '" + l.name +
                                     "' references unknown source '" + src + "'");
                }
                c += it->second;
            }
        }
        in_c.push_back(c);
        filters[l.name] = l.filters;
    }
    return in_c;
}

ParamStore init_params(const ArchitectureSpec& arch, Rng& rng) {
    validate_architecture(arch);
    const std::vector<int> in_c = layer_in_channels(arch);
    ParamStore store;
    store.layers.reserve(arch.layers.size());
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        LayerParams p;
        const int fan_in = in_c[i] * l.kernel * l.kernel;
        const float std = std::sqrt(2.0f / static_cast<float>(fan_in));
        p.conv.weight = randn({l.filters, in_c[i], l.kernel, l.kernel}, rng, 0.0f, std);
        p.conv.bias.assign(static_cast<std::size_t>(l.filters), 0.0f);
        p.conv.stride = l.stride;
        p.conv.pad = l.kernel / 2;
        if (l.normalized) p.bn = BatchNormState(l.filters);
        store.layers.push_back(std::move(p));
    }
    return store;
}

ParamStore zeros_like_params(const ArchitectureSpec& arch) {
    const std::vector<int> in_c = layer_in_channels(arch);
    ParamStore store;
    store.layers.reserve(arch.layers.size());
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        LayerParams p;
        p.conv.weight = tensor_fill({l.filters, in_c[i], l.kernel, l.kernel}, 0.0f);
        p.conv.bias.assign(static_cast<std::size_t>(l.filters), 0.0f);
        p.conv.stride = l.stride;
        p.conv.pad = l.kernel / 2;
        if (l.normalized) {
            p.bn = BatchNormState(l.filters);
            std::fill(p.bn.gamma.begin(), p.bn.gamma.end(), 0.0f);
            std::fill(p.bn.running_var.begin(), p.bn.running_var.end(), 0.0f);
        }
        store.layers.push_back(std::move(p));
    }
    return store;
}

std::vector<NamedParam> named_views(const ArchitectureSpec& arch, ParamStore& store) {
    if (arch.layers.size() != store.layers.size()) {
        throw StateError("param store does not match the architecture");
    }
    std::vector<NamedParam> views;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& spec = arch.layers[i];
        LayerParams& p = store.layers[i];
        const Shape4 ws = p.conv.weight.shape;
        views.push_back({spec.name + ".weight",
                         &p.conv.weight.data,
                         {static_cast<std::uint32_t>(ws.n), static_cast<std::uint32_t>(ws.c),
                          static_cast<std::uint32_t>(ws.h), static_cast<std::uint32_t>(ws.w)},
                         true});
        views.push_back({spec.name + ".bias",
                         &p.conv.bias,
                         {static_cast<std::uint32_t>(p.conv.bias.size())},
                         true});
        if (spec.normalized) {
            const auto dim = static_cast<std::uint32_t>(p.bn.gamma.size());
            views.push_back({spec.name + ".gamma", &p.bn.gamma, {dim}, true});
            views.push_back({spec.name + ".beta", &p.bn.beta, {dim}, true});
            views.push_back({spec.name + ".running_mean", &p.bn.running_mean, {dim}, false});
            views.push_back({spec.name + ".running_var", &p.bn.running_var, {dim}, false});
        }
    }
    std::sort(views.begin(), views.end(),
              [](const NamedParam& a, const NamedParam& b) { return a.name < b.name; });
    return views;
}

ForwardResult forward(const ArchitectureSpec& arch, ParamStore& params, const Tensor4& x,
                      Mode mode) {
    if (arch.layers.size() != params.layers.size()) {
        throw StateError("param store does not match the architecture");
    }
    if (x.shape.c != arch.input_channels) {
        throw ShapeError("forward: input has " + std::to_string(x.shape.c) +
                         " channels, expected " + std::to_string(arch.input_channels));
    }
    for (const auto& [dim, label] : {std::pair{x.shape.h, "height"}, {x.shape.w, "width"}}) {
        if (dim % arch.downsample_factor != 0) {
            throw ShapeError(std::string("forward: ") + label + " " + std::to_string(dim) +
                             " not divisible by " + std::to_string(arch.downsample_factor));
        }
        if (dim < 24) {
            throw ShapeError(std::string("forward: ") + label + " " + std::to_string(dim) +
                             " below the 24 pixel minimum");
        }
    }

    std::map<std::string, int> index;
    ForwardCache cache;
    cache.mode = mode;
    cache.input = x;
    cache.layers.resize(arch.layers.size());

    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& spec = arch.layers[i];
        LayerParams& p = params.layers[i];
        LayerCache& lc = cache.layers[i];

        const Tensor4* in = nullptr;
        if (spec.input_sources.size() == 1) {
            const int s = resolve_source(spec.input_sources[0], index, spec.name);
            in = s < 0 ? &cache.input : &cache.layers[static_cast<std::size_t>(s)].activ;
        } else {
            const int a = resolve_source(spec.input_sources[0], index, spec.name);
            const int b = resolve_source(spec.input_sources[1], index, spec.name);
            const Tensor4& ta = a < 0 ? cache.input : cache.layers[static_cast<std::size_t>(a)].activ;
            const Tensor4& tb = b < 0 ? cache.input : cache.layers[static_cast<std::size_t>(b)].activ;
            lc.concat_input = channel_concat(ta, tb);
            in = &lc.concat_input;
        }

        lc.conv_out = spec.kind == LayerKind::Conv
                          ? conv2d_forward(*in, p.conv)
                          : conv_transpose2d_forward(*in, p.conv, p.conv.stride - 1);
        lc.activ = spec.normalized ? relu(batchnorm_forward(lc.conv_out, p.bn, mode))
                                   : lc.conv_out;
        index[spec.name] = static_cast<int>(i);
    }

    ForwardResult result;
    result.reconstruction = cache.layers.back().activ;
    result.cache = std::move(cache);
    return result;
}

ParamStore backward(const ArchitectureSpec& arch, const ParamStore& params,
                    const ForwardCache& cache, const Tensor4& grad_recon) {
    if (cache.mode != Mode::Train) {
        throw StateError("backward: cache was not produced by a train-mode forward");
    }
    if (cache.layers.size() != arch.layers.size() ||
        params.layers.size() != arch.layers.size()) {
        throw StateError("backward: cache does not match the architecture");
    }
    if (!(grad_recon.shape == cache.layers.back().activ.shape)) {
        throw ShapeError("backward: grad_recon shape does not match the reconstruction");
    }

    std::map<std::string, int> index;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        index[arch.layers[i].name] = static_cast<int>(i);
    }

    ParamStore grads = zeros_like_params(arch);
    std::vector<Tensor4> grad_act(arch.layers.size());
    grad_act.back() = grad_recon;

    for (std::size_t ri = arch.layers.size(); ri-- > 0;) {
        const LayerSpec& spec = arch.layers[ri];
        const LayerParams& p = params.layers[ri];
        const LayerCache& lc = cache.layers[ri];
        if (grad_act[ri].data.empty()) {
            throw StateError("backward: layer '" + spec.name + "' received no gradient");
        }
        Tensor4 g = std::move(grad_act[ri]);

        if (spec.normalized) {
            g = relu_backward(lc.activ, g);
            BatchNormGrads bg = batchnorm_backward(lc.conv_out, p.bn, g);
            grads.layers[ri].bn.gamma = std::move(bg.grad_gamma);
            grads.layers[ri].bn.beta = std::move(bg.grad_beta);
            g = std::move(bg.grad_x);
        }

        const Tensor4* in = nullptr;
        if (spec.input_sources.size() == 2) {
            in = &lc.concat_input;
        } else {
            const int s = resolve_source(spec.input_sources[0], index, spec.name);
            in = s < 0 ? &cache.input : &cache.layers[static_cast<std::size_t>(s)].activ;
        }

        ConvGrads cg = spec.kind == LayerKind::Conv
                           ? conv2d_backward(*in, p.conv, g)
                           : conv_transpose2d_backward(*in, p.conv, p.conv.stride - 1, g);
        grads.layers[ri].conv.weight = std::move(cg.grad_weight);
        grads.layers[ri].conv.bias = std::move(cg.grad_bias);

        if (spec.input_sources.size() == 2) {
            const int a = resolve_source(spec.input_sources[0], index, spec.name);
            const int b = resolve_source(spec.input_sources[1], index, spec.name);
            const int ca = a < 0 ? arch.input_channels
                                 : arch.layers[static_cast<std::size_t>(a)].filters;
            const int cb = b < 0 ? arch.input_channels
                                 : arch.layers[static_cast<std::size_t>(b)].filters;
            if (a >= 0) accumulate(grad_act[static_cast<std::size_t>(a)],
                                   slice_channels(cg.grad_x, 0, ca));
            if (b >= 0) accumulate(grad_act[static_cast<std::size_t>(b)],
                                   slice_channels(cg.grad_x, ca, cb));
        } else {
            const int s = resolve_source(spec.input_sources[0], index, spec.name);
            if (s >= 0) accumulate(grad_act[static_cast<std::size_t>(s)], std::move(cg.grad_x));
        }
    }
    return grads;
}

void save_checkpoint(const ArchitectureSpec& arch, ParamStore& params, const std::string& path) {
    std::vector<NamedParam> views = named_views(arch, params);
    std::string buf;
    put_bytes(buf, kMagic, sizeof(kMagic));
    put_u32(buf, static_cast<std::uint32_t>(views.size()));
    for (const NamedParam& v : views) {
        put_u16(buf, static_cast<std::uint16_t>(v.name.size()));
        put_bytes(buf, v.name.data(), v.name.size());
        buf.push_back(static_cast<char>(v.dims.size()));
        for (std::uint32_t d : v.dims) put_u32(buf, d);
        put_bytes(buf, v.flat->data(), v.flat->size() * sizeof(float));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("checkpoint: write to '" + path + "' failed");
}

ParamStore load_checkpoint(const ArchitectureSpec& arch, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader r{buf};
    r.need(sizeof(kMagic), "magic");
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("checkpoint: bad magic in '" + path + "'");
    }
    r.pos = sizeof(kMagic);
    const std::uint32_t count = r.u32("tensor count");

    ParamStore store = zeros_like_params(arch);
    std::vector<NamedParam> views = named_views(arch, store);
    std::map<std::string, NamedParam*> by_name;
    for (NamedParam& v : views) by_name[v.name] = &v;
    std::map<std::string, bool> seen;

    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint16_t name_len = r.u16("name length");
        const std::string name = r.str(name_len, "tensor name");
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError("checkpoint: unexpected tensor '" + name + "'");
        }
        if (seen[name]) throw FormatError("checkpoint: duplicate tensor '" + name + "'");
        seen[name] = true;
        NamedParam& v = *it->second;

        const std::uint8_t rank = r.u8("rank");
        if (rank != v.dims.size()) {
            throw FormatError("checkpoint: tensor '" + name + "' has rank " +
                              std::to_string(rank) + ", expected " +
                              std::to_string(v.dims.size()));
        }
        std::size_t numel = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = r.u32("dim");
            if (dim != v.dims[d]) {
                throw FormatError("checkpoint: tensor '" + name + "' dim " + std::to_string(d) +
                                  " is " + std::to_string(dim) + ", expected " +
                                  std::to_string(v.dims[d]));
            }
            numel *= dim;
        }
        r.need(numel * sizeof(float), "tensor data");
        std::memcpy(v.flat->data(), buf.data() + r.pos, numel * sizeof(float));
        r.pos += numel * sizeof(float);
    }
    if (seen.size() != views.size()) {
        for (const NamedParam& v : views) {
            if (!seen[v.name]) {
                throw FormatError("checkpoint: missing tensor '" + v.name + "'");
            }
        }
    }
    if (r.pos != buf.size()) {
        throw FormatError("checkpoint: trailing bytes after the last tensor");
    }
    return store;
}

} // namespace residua

#include "residua/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <jpeglib.h>
#include <png.h>

namespace residua {

namespace {

constexpr int kMaxDim = 1 << 15;

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open image file: " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("read failure on image file: " + path);
    }
    return bytes;
}

void check_dims(int w, int h, const std::string& path) {
    if (w < 1 || h < 1 || w > kMaxDim || h > kMaxDim) {
        throw IoError("unreasonable image dimensions in " + path);
    }
}

std::uint8_t average_rgb(unsigned r, unsigned g, unsigned b) {
    // Nearest-integer mean of the three channels.
    return static_cast<std::uint8_t>((r + g + b + 1) / 3);
}

// ---- PNM (binary PGM / PPM) ----

struct PnmCursor {
    const std::vector<std::uint8_t>& bytes;
    std::size_t off;
    const std::string& path;
};

bool pnm_is_space(std::uint8_t b) {
    return b == ' ' || b == '\t' || b == '\r' || b == '\n' || b == '\v' || b == '\f';
}

int pnm_next_int(PnmCursor& cur) {
    while (cur.off < cur.bytes.size()) {
        std::uint8_t b = cur.bytes[cur.off];
        if (pnm_is_space(b)) {
            ++cur.off;
        } else if (b == '#') {
            while (cur.off < cur.bytes.size() && cur.bytes[cur.off] != '\n') {
                ++cur.off;
            }
        } else {
            break;
        }
    }
    if (cur.off >= cur.bytes.size() || cur.bytes[cur.off] < '0' || cur.bytes[cur.off] > '9') {
        throw IoError("malformed PNM header in " + cur.path);
    }
    long value = 0;
    while (cur.off < cur.bytes.size() && cur.bytes[cur.off] >= '0' &&
           cur.bytes[cur.off] <= '9') {
        value = value * 10 + (cur.bytes[cur.off] - '0');
        if (value > 1 << 20) {
            throw IoError("malformed PNM header in " + cur.path);
        }
        ++cur.off;
    }
    return static_cast<int>(value);
}

GrayImage8 decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    const bool color = bytes[1] == '6';
    PnmCursor cur{bytes, 2, path};
    const int w = pnm_next_int(cur);
    const int h = pnm_next_int(cur);
    const int maxval = pnm_next_int(cur);
    check_dims(w, h, path);
    if (maxval != 255) {
        throw IoError("only 8-bit PNM images are supported: " + path);
    }
    if (cur.off >= bytes.size() || !pnm_is_space(bytes[cur.off])) {
        throw IoError("malformed PNM header in " + path);
    }
    ++cur.off;

    const std::size_t pixels = static_cast<std::size_t>(w) * h;
    const std::size_t need = color ? pixels * 3 : pixels;
    if (bytes.size() - cur.off < need) {
        throw IoError("truncated PNM raster in " + path);
    }
    GrayImage8 img;
    img.h = h;
    img.w = w;
    img.pix.resize(pixels);
    const std::uint8_t* src = bytes.data() + cur.off;
    if (color) {
        for (std::size_t i = 0; i < pixels; ++i) {
            img.pix[i] = average_rgb(src[3 * i], src[3 * i + 1], src[3 * i + 2]);
        }
    } else {
        std::memcpy(img.pix.data(), src, pixels);
    }
    return img;
}

// ---- PNG ----

struct PngReadCtx {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t off;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
    auto* ctx = static_cast<PngReadCtx*>(png_get_io_ptr(png));
    if (ctx->off + n > ctx->size) {
        png_error(png, "unexpected end of stream");
    }
    std::memcpy(out, ctx->data + ctx->off, n);
    ctx->off += n;
}

GrayImage8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        throw IoError("png decoder initialization failed for " + path);
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png decoder initialization failed for " + path);
    }

    GrayImage8 img;
    std::vector<std::uint8_t> row;
    PngReadCtx ctx{bytes.data(), bytes.size(), 0};

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("undecodable PNG file: " + path);
    }

    png_set_read_fn(png, &ctx, png_mem_read);
    png_read_info(png, info);

    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) {
        png_set_strip_16(png);
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    if (w < 1 || h < 1 || w > kMaxDim || h > kMaxDim || (channels != 1 && channels != 3)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG layout in " + path);
    }

    img.h = h;
    img.w = w;
    img.pix.resize(static_cast<std::size_t>(w) * h);
    row.resize(static_cast<std::size_t>(w) * channels);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        std::uint8_t* dst = img.pix.data() + static_cast<std::size_t>(y) * w;
        if (channels == 1) {
            std::memcpy(dst, row.data(), static_cast<std::size_t>(w));
        } else {
            for (int x = 0; x < w; ++x) {
                dst[x] = average_rgb(row[3 * x], row[3 * x + 1], row[3 * x + 2]);
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// ---- JPEG ----

struct JpegErrorMgr {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    longjmp(err->jump, 1);
}

void jpeg_emit_silent(j_common_ptr, int) {}

GrayImage8 decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.mgr);
    jerr.mgr.error_exit = jpeg_error_exit;
    jerr.mgr.emit_message = jpeg_emit_silent;

    GrayImage8 img;
    std::vector<std::uint8_t> row;

    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("undecodable JPEG file: " + path);
    }

    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space =
        cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    const int channels = cinfo.output_components;
    if (w < 1 || h < 1 || w > kMaxDim || h > kMaxDim || (channels != 1 && channels != 3)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("unsupported JPEG layout in " + path);
    }

    img.h = h;
    img.w = w;
    img.pix.resize(static_cast<std::size_t>(w) * h);
    row.resize(static_cast<std::size_t>(w) * channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        const int y = static_cast<int>(cinfo.output_scanline);
        JSAMPROW rows[1] = {row.data()};
        jpeg_read_scanlines(&cinfo, rows, 1);
        std::uint8_t* dst = img.pix.data() + static_cast<std::size_t>(y) * w;
        if (channels == 1) {
            std::memcpy(dst, row.data(), static_cast<std::size_t>(w));
        } else {
            for (int x = 0; x < w; ++x) {
                dst[x] = average_rgb(row[3 * x], row[3 * x + 1], row[3 * x + 2]);
            }
        }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

} // namespace

GrayImage8 decode_gray8(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
        return decode_pnm(bytes, path);
    }
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
        return decode_png(bytes, path);
    }
    if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) {
        return decode_jpeg(bytes, path);
    }
    throw IoError("unrecognized image format: " + path);
}

std::vector<std::uint8_t> encode_pgm(const GrayImage8& img) {
    if (img.h < 1 || img.w < 1 ||
        img.pix.size() != static_cast<std::size_t>(img.h) * img.w) {
        throw ValueError("image raster does not match its dimensions");
    }
    const std::string header =
        "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pix.begin(), img.pix.end());
    return out;
}

void save_pgm(const GrayImage8& img, const std::string& path) {
    const std::vector<std::uint8_t> bytes = encode_pgm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failure on " + path);
    }
}

Tensor4 gray8_to_tensor(const GrayImage8& img) {
    if (img.h < 1 || img.w < 1 ||
        img.pix.size() != static_cast<std::size_t>(img.h) * img.w) {
        throw ValueError("image raster does not match its dimensions");
    }
    Tensor4 t(1, 1, img.h, img.w);
    for (std::size_t i = 0; i < img.pix.size(); ++i) {
        t.data[i] = static_cast<float>(img.pix[i]) / 255.0f;
    }
    return t;
}

GrayImage8 tensor_to_gray8(const Tensor4& x) {
    if (x.shape.n != 1 || x.shape.c != 1) {
        throw ShapeError("expected a single-channel (1, 1, h, w) image tensor");
    }
    GrayImage8 img;
    img.h = x.shape.h;
    img.w = x.shape.w;
    img.pix.resize(static_cast<std::size_t>(img.h) * img.w);
    for (std::size_t i = 0; i < img.pix.size(); ++i) {
        const float v = std::clamp(x.data[i], 0.0f, 1.0f);
        img.pix[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return img;
}

Tensor4 load_grayscale(const std::string& path) {
    return gray8_to_tensor(decode_gray8(path));
}

void save_grayscale(const Tensor4& x, const std::string& path) {
    save_pgm(tensor_to_gray8(x), path);
}

} // namespace residua

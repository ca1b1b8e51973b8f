#include "mixforge/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include "mixforge/errors.hpp"

namespace mixforge {

namespace {

struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

ImageU8 read_png_file(std::FILE* f, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> row_ptrs;
    ImageU8 img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CorruptFileError("corrupt PNG: " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CorruptFileError("unsupported PNG channel count: " + path);
    }
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.channels = channels;
    img.pixels.resize(static_cast<std::size_t>(w) * h * channels);
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y)
        row_ptrs[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * channels;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

ImageU8 read_jpeg_file(std::FILE* f, const std::string& path) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw CorruptFileError("corrupt JPEG: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);

    ImageU8 img;
    img.width = static_cast<int>(cinfo.output_width);
    img.height = static_cast<int>(cinfo.output_height);
    img.channels = cinfo.output_components;
    if (img.channels != 1 && img.channels != 3) {
        jpeg_destroy_decompress(&cinfo);
        throw CorruptFileError("unsupported JPEG channel count: " + path);
    }
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* dst = img.pixels.data() + cinfo.output_scanline * row;
        jpeg_read_scanlines(&cinfo, &dst, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open image: " + path);
    FileCloser closer{f};
    unsigned char magic[4] = {0, 0, 0, 0};
    const std::size_t got = std::fread(magic, 1, sizeof(magic), f);
    std::rewind(f);
    if (got >= 4 && magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G')
        return read_png_file(f, path);
    if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg_file(f, path);
    throw CorruptFileError("not a PNG or JPEG file: " + path);
}

void write_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw InputError("write_png: channels must be 1 or 3");
    if (img.width < 1 || img.height < 1) throw InputError("write_png: empty image");
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw InputError("write_png: pixel buffer size mismatch");

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    FileCloser closer{f};

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path);
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * row));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_png_tensor(const std::string& path, const Tensor& chw) {
    if (chw.rank() != 3) throw InputError("write_png_tensor: expected (C,H,W)");
    const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    if (C != 1 && C != 3) throw InputError("write_png_tensor: C must be 1 or 3");
    ImageU8 img;
    img.width = W;
    img.height = H;
    img.channels = C;
    img.pixels.resize(static_cast<std::size_t>(W) * H * C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                const Scalar v = std::clamp(chw.at3(c, y, x), Scalar(0), Scalar(1));
                img.pixels[(static_cast<std::size_t>(y) * W + x) * C + c] =
                    static_cast<unsigned char>(std::lround(v * 255));
            }
    write_png(path, img);
}

void write_png_grid(const std::string& path, const std::vector<Tensor>& tiles, int cols,
                    int gutter) {
    if (tiles.empty()) throw InputError("write_png_grid: no tiles");
    if (cols < 1) throw InputError("write_png_grid: cols must be >= 1");
    if (gutter < 0) throw InputError("write_png_grid: gutter must be >= 0");
    const int C = tiles[0].dim(0), H = tiles[0].dim(1), W = tiles[0].dim(2);
    if (tiles[0].rank() != 3 || (C != 1 && C != 3))
        throw InputError("write_png_grid: tiles must be (C,H,W) with C 1 or 3");
    for (const Tensor& t : tiles)
        check_same_shape(t, tiles[0], "write_png_grid");

    const int n = static_cast<int>(tiles.size());
    const int rows = (n + cols - 1) / cols;
    ImageU8 img;
    img.channels = C;
    img.width = cols * W + (cols + 1) * gutter;
    img.height = rows * H + (rows + 1) * gutter;
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * C, 128);
    for (int i = 0; i < n; ++i) {
        const int r = i / cols, col = i % cols;
        const int oy = gutter + r * (H + gutter);
        const int ox = gutter + col * (W + gutter);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c) {
                    const Scalar v = std::clamp(tiles[static_cast<std::size_t>(i)].at3(c, y, x),
                                                Scalar(0), Scalar(1));
                    img.pixels[(static_cast<std::size_t>(oy + y) * img.width + (ox + x)) * C + c] =
                        static_cast<unsigned char>(std::lround(v * 255));
                }
    }
    write_png(path, img);
}

}  // namespace mixforge

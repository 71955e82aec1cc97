#include "dr/image_io.hpp"

#include <cstdio>
#include <fstream>

#include "dr/common.hpp"

namespace dr {

std::vector<uint8_t> ppm_bytes(int w, int h, const std::vector<uint8_t>& rgb) {
    if ((int)rgb.size() != 3 * w * h)
        throw io_error("ppm: pixel buffer size mismatch");
    std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), rgb.begin(), rgb.end());
    return out;
}

static void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw io_error("cannot open for writing: " + path);
    f.write((const char*)bytes.data(), (std::streamsize)bytes.size());
    if (!f)
        throw io_error("write failed: " + path);
}

void write_ppm(const std::string& path, int w, int h, const std::vector<uint8_t>& rgb) {
    write_file(path, ppm_bytes(w, h, rgb));
}

void write_pgm(const std::string& path, int w, int h, const std::vector<uint8_t>& gray) {
    if ((int)gray.size() != w * h)
        throw io_error("pgm: pixel buffer size mismatch");
    std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), gray.begin(), gray.end());
    write_file(path, out);
}

// Minimal Netpbm header reader: magic, whitespace/comment-separated fields.
static bool read_header(std::ifstream& f, const char* magic, int& w, int& h) {
    std::string m;
    f >> m;
    if (m != magic)
        return false;
    auto next_int = [&](int& out) {
        for (;;) {
            int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
        f >> out;
        return (bool)f;
    };
    int maxval = 0;
    if (!next_int(w) || !next_int(h) || !next_int(maxval))
        return false;
    if (maxval != 255)
        return false;
    f.get();  // single whitespace before binary payload
    return true;
}

ppm_image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw io_error("cannot open: " + path);
    ppm_image img;
    if (!read_header(f, "P6", img.w, img.h))
        throw io_error("not a maxval-255 P6 file: " + path);
    img.rgb.resize((size_t)3 * img.w * img.h);
    f.read((char*)img.rgb.data(), (std::streamsize)img.rgb.size());
    if (f.gcount() != (std::streamsize)img.rgb.size())
        throw io_error("truncated P6 payload: " + path);
    return img;
}

pgm_image read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw io_error("cannot open: " + path);
    pgm_image img;
    if (!read_header(f, "P5", img.w, img.h))
        throw io_error("not a maxval-255 P5 file: " + path);
    img.gray.resize((size_t)img.w * img.h);
    f.read((char*)img.gray.data(), (std::streamsize)img.gray.size());
    if (f.gcount() != (std::streamsize)img.gray.size())
        throw io_error("truncated P5 payload: " + path);
    return img;
}

std::vector<uint8_t> planes_to_interleaved(const std::vector<uint8_t>& planes, int h, int w) {
    if ((int)planes.size() != 3 * h * w)
        throw io_error("planes_to_interleaved: size mismatch");
    std::vector<uint8_t> out(planes.size());
    const int hw = h * w;
    for (int i = 0; i < hw; i++) {
        out[3 * i + 0] = planes[i];
        out[3 * i + 1] = planes[hw + i];
        out[3 * i + 2] = planes[2 * hw + i];
    }
    return out;
}

tensor image_bytes_to_tensor(const ppm_image& img) {
    tensor t({3, img.h, img.w});
    const int hw = img.h * img.w;
    for (int i = 0; i < hw; i++)
        for (int c = 0; c < 3; c++)
            t.data[(int64_t)c * hw + i] = (float)img.rgb[3 * i + c] / 127.5f - 1.0f;
    return t;
}

}  // namespace dr

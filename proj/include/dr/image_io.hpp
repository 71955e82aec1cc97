#ifndef DR_IMAGE_IO_HPP
#define DR_IMAGE_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dr/tensor.hpp"

namespace dr {

// Binary PPM (P6) / PGM (P5), maxval 255. Header is exactly
// "P6\n<w> <h>\n255\n" so outputs are byte-stable across runs.
void write_ppm(const std::string& path, int w, int h, const std::vector<uint8_t>& rgb_interleaved);
void write_pgm(const std::string& path, int w, int h, const std::vector<uint8_t>& gray);

struct ppm_image {
    int w = 0, h = 0;
    std::vector<uint8_t> rgb;  // interleaved
};

struct pgm_image {
    int w = 0, h = 0;
    std::vector<uint8_t> gray;
};

ppm_image read_ppm(const std::string& path);
pgm_image read_pgm(const std::string& path);

// [3,H,W] planes -> interleaved RGB rows.
std::vector<uint8_t> planes_to_interleaved(const std::vector<uint8_t>& planes, int h, int w);

// Interleaved bytes -> [3,H,W] float tensor in [-1,1].
tensor image_bytes_to_tensor(const ppm_image& img);

// Serialize a decoded latent ([3,H,W] planes) to PPM bytes in memory.
std::vector<uint8_t> ppm_bytes(int w, int h, const std::vector<uint8_t>& rgb_interleaved);

}  // namespace dr

#endif

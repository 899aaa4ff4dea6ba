#include <algorithm>
#include <cmath>
#include <cstring>

#include "uatr/binary_io.hpp"
#include "uatr/corpus.hpp"
#include "uatr/error.hpp"

namespace uatr {
namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const char* p) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                      (static_cast<unsigned char>(p[1]) << 8));
}

std::uint32_t le32(const char* p) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(p[3])) << 24);
}

struct FmtChunk {
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::uint16_t block_align = 0;
    std::uint16_t bits = 0;
};

double decode_sample(const char* p, const FmtChunk& fmt) {
    if (fmt.format == kFormatFloat) {
        float v;
        std::memcpy(&v, p, 4);
        return static_cast<double>(v);
    }
    switch (fmt.bits) {
        case 8:
            return (static_cast<unsigned char>(p[0]) - 128.0) / 128.0;
        case 16:
            return static_cast<std::int16_t>(le16(p)) / 32768.0;
        case 24: {
            std::int32_t v = static_cast<std::int32_t>(
                (static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) << 8) |
                (static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 16) |
                (static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 24));
            return (v >> 8) / 8388608.0;
        }
        case 32:
            return static_cast<std::int32_t>(le32(p)) / 2147483648.0;
    }
    throw UnsupportedError("unsupported PCM bit depth " + std::to_string(fmt.bits));
}

}  // namespace

AudioClip decode_wav(std::span<const char> bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw FormatError("not a RIFF/WAVE file");

    std::optional<FmtChunk> fmt;
    const char* data = nullptr;
    std::size_t data_size = 0;
    bool have_data = false;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* hdr = bytes.data() + pos;
        std::uint32_t size = le32(hdr + 4);
        std::size_t body = pos + 8;
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (size < 16 || body + size > bytes.size()) throw FormatError("malformed fmt chunk");
            const char* f = bytes.data() + body;
            FmtChunk c;
            c.format = le16(f);
            c.channels = le16(f + 2);
            c.sample_rate = le32(f + 4);
            c.block_align = le16(f + 12);
            c.bits = le16(f + 14);
            if (c.format == kFormatExtensible) {
                if (size < 40) throw FormatError("malformed extensible fmt chunk");
                c.format = le16(f + 24);  // first two bytes of the sub-format GUID
            }
            fmt = c;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            if (body + size > bytes.size()) throw FormatError("truncated data chunk");
            data = bytes.data() + body;
            data_size = size;
            have_data = true;
            break;
        }
        if (body + size > bytes.size()) throw FormatError("truncated chunk");
        pos = body + size + (size & 1u);
    }

    if (!fmt) throw FormatError("missing fmt chunk");
    if (!have_data) throw FormatError("missing data chunk");
    if (fmt->sample_rate == 0) throw FormatError("zero sample rate");
    if (fmt->channels < 1 || fmt->channels > 2)
        throw UnsupportedError("unsupported channel count " + std::to_string(fmt->channels));
    if (fmt->format == kFormatFloat) {
        if (fmt->bits != 32) throw UnsupportedError("only 32-bit float WAV is supported");
    } else if (fmt->format == kFormatPcm) {
        if (fmt->bits != 8 && fmt->bits != 16 && fmt->bits != 24 && fmt->bits != 32)
            throw UnsupportedError("unsupported PCM bit depth " + std::to_string(fmt->bits));
    } else {
        throw UnsupportedError("unsupported WAV encoding tag " + std::to_string(fmt->format));
    }

    const std::size_t width = fmt->bits / 8;
    const std::size_t frame = width * fmt->channels;
    if (fmt->block_align != frame) throw FormatError("block alignment disagrees with format");
    if (data_size == 0) throw EmptyInputError("empty data chunk");
    if (data_size % frame != 0) throw FormatError("data chunk is not a whole number of frames");

    AudioClip clip;
    clip.sample_rate = static_cast<int>(fmt->sample_rate);
    const std::size_t n = data_size / frame;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const char* p = data + i * frame;
        double acc = 0.0;
        for (std::size_t c = 0; c < fmt->channels; ++c) acc += decode_sample(p + c * width, *fmt);
        double v = acc / fmt->channels;
        if (!std::isfinite(v)) throw FormatError("non-finite sample in data chunk");
        clip.samples[i] = v;
    }
    return clip;
}

AudioClip load_wav(const std::string& path) {
    std::string bytes = read_file(path);
    AudioClip clip = decode_wav(std::span<const char>(bytes.data(), bytes.size()));
    clip.source_id = path;
    return clip;
}

std::string encode_wav(std::span<const double> samples, int sample_rate, WavEncoding encoding,
                       int channels) {
    const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
    const std::uint16_t tag = encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat;
    const std::uint32_t block = bits / 8 * channels;
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size()) * block;

    ByteWriter w;
    w.bytes("RIFF");
    w.u32(36 + data_bytes);
    w.bytes("WAVE");
    w.bytes("fmt ");
    w.u32(16);
    w.u32(static_cast<std::uint32_t>(tag) | (static_cast<std::uint32_t>(channels) << 16));
    w.u32(static_cast<std::uint32_t>(sample_rate));
    w.u32(static_cast<std::uint32_t>(sample_rate) * block);
    w.u32(block | (static_cast<std::uint32_t>(bits) << 16));
    w.bytes("data");
    w.u32(data_bytes);
    std::string out = w.str();
    out.reserve(out.size() + data_bytes);
    for (double s : samples) {
        for (int c = 0; c < channels; ++c) {
            if (encoding == WavEncoding::pcm16) {
                double q = std::round(std::clamp(s, -1.0, 32767.0 / 32768.0) * 32768.0);
                auto v = static_cast<std::uint16_t>(static_cast<std::int16_t>(q));
                out.push_back(static_cast<char>(v & 0xff));
                out.push_back(static_cast<char>(v >> 8));
            } else {
                float f = static_cast<float>(s);
                std::uint32_t b;
                std::memcpy(&b, &f, 4);
                for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((b >> (8 * i)) & 0xff));
            }
        }
    }
    return out;
}

void write_wav(const std::string& path, std::span<const double> samples, int sample_rate,
               WavEncoding encoding) {
    write_file(path, encode_wav(samples, sample_rate, encoding));
}

}  // namespace uatr

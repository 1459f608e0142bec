#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dntsc/core/errors.hpp"
#include "dntsc/range_coder.hpp"

namespace dntsc {

// D-NTSC bitstream container. Layout (all integers little-endian, see
// docs/FORMATS.md):
//   magic "DNTC" | version u8 | user_id u8 | flags u8 | reserved u8
//   img_h,img_w,latent_h,latent_w,latent_c,hyper_h,hyper_w,hyper_c  (u32 each)
//   tables_len u32 | z_len u32 | y_len u32
//   [tables region] [z segment] [y segment]
// flags bit0: hyperprior frequency tables embedded in the header region.
struct Bitstream {
    static constexpr char kMagic[4] = {'D', 'N', 'T', 'C'};
    static constexpr std::uint8_t kVersion = 1;

    std::uint8_t user_id = 0;  // 1 or 2
    bool tables_embedded = true;
    std::uint32_t img_h = 0, img_w = 0;
    std::uint32_t latent_h = 0, latent_w = 0, latent_c = 0;
    std::uint32_t hyper_h = 0, hyper_w = 0, hyper_c = 0;
    std::vector<FrequencyTable> z_tables;  // present when tables_embedded
    std::vector<std::uint8_t> z_segment;
    std::vector<std::uint8_t> y_segment;

    std::size_t header_bytes() const {
        return 4 + 4 + 8 * 4 + 3 * 4 + tables_bytes();
    }
    std::size_t tables_bytes() const {
        return tables_embedded
                   ? z_tables.size() * (4 + (FrequencyTable::kSymbols + 1) * 2)
                   : 0;
    }
    std::size_t total_bytes() const {
        return header_bytes() + z_segment.size() + y_segment.size();
    }

    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out;
        out.reserve(total_bytes());
        auto put_u8 = [&](std::uint8_t v) { out.push_back(v); };
        auto put_u16 = [&](std::uint16_t v) {
            out.push_back(static_cast<std::uint8_t>(v & 0xff));
            out.push_back(static_cast<std::uint8_t>(v >> 8));
        };
        auto put_u32 = [&](std::uint32_t v) {
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
        };
        out.insert(out.end(), kMagic, kMagic + 4);
        put_u8(kVersion);
        put_u8(user_id);
        put_u8(tables_embedded ? 1 : 0);
        put_u8(0);
        for (std::uint32_t v : {img_h, img_w, latent_h, latent_w, latent_c, hyper_h, hyper_w, hyper_c})
            put_u32(v);
        put_u32(static_cast<std::uint32_t>(tables_bytes()));
        put_u32(static_cast<std::uint32_t>(z_segment.size()));
        put_u32(static_cast<std::uint32_t>(y_segment.size()));
        if (tables_embedded) {
            for (const auto& t : z_tables) {
                put_u32(static_cast<std::uint32_t>(t.center));
                for (int i = 0; i <= FrequencyTable::kSymbols; ++i)
                    put_u16(t.freq[static_cast<std::size_t>(i)]);
            }
        }
        out.insert(out.end(), z_segment.begin(), z_segment.end());
        out.insert(out.end(), y_segment.begin(), y_segment.end());
        return out;
    }

    static Bitstream parse(const std::vector<std::uint8_t>& bytes) {
        Bitstream bs;
        std::size_t pos = 0;
        auto need = [&](std::size_t n) {
            if (pos + n > bytes.size()) throw DecodeError("bitstream truncated");
        };
        auto get_u8 = [&]() {
            need(1);
            return bytes[pos++];
        };
        auto get_u16 = [&]() -> std::uint16_t {
            need(2);
            std::uint16_t v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
            pos += 2;
            return v;
        };
        auto get_u32 = [&]() -> std::uint32_t {
            need(4);
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
            pos += 4;
            return v;
        };
        need(4);
        if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw DecodeError("bad bitstream magic");
        pos += 4;
        if (get_u8() != kVersion) throw DecodeError("unsupported bitstream version");
        bs.user_id = get_u8();
        bs.tables_embedded = (get_u8() & 1) != 0;
        get_u8();
        bs.img_h = get_u32();
        bs.img_w = get_u32();
        bs.latent_h = get_u32();
        bs.latent_w = get_u32();
        bs.latent_c = get_u32();
        bs.hyper_h = get_u32();
        bs.hyper_w = get_u32();
        bs.hyper_c = get_u32();
        const std::uint32_t tables_len = get_u32();
        const std::uint32_t z_len = get_u32();
        const std::uint32_t y_len = get_u32();
        if (bs.tables_embedded) {
            const std::size_t n_elems =
                static_cast<std::size_t>(bs.hyper_h) * bs.hyper_w * bs.hyper_c;
            const std::size_t expect = n_elems * (4 + (FrequencyTable::kSymbols + 1) * 2);
            if (tables_len != expect) throw DecodeError("frequency table region length mismatch");
            bs.z_tables.resize(n_elems);
            for (auto& t : bs.z_tables) {
                t.center = static_cast<std::int32_t>(get_u32());
                t.freq.resize(FrequencyTable::kSymbols + 1);
                for (int i = 0; i <= FrequencyTable::kSymbols; ++i)
                    t.freq[static_cast<std::size_t>(i)] = get_u16();
                t.rebuild_cum();
            }
        } else if (tables_len != 0) {
            throw DecodeError("unexpected table region");
        }
        need(z_len);
        bs.z_segment.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                            bytes.begin() + static_cast<std::ptrdiff_t>(pos + z_len));
        pos += z_len;
        need(y_len);
        bs.y_segment.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                            bytes.begin() + static_cast<std::ptrdiff_t>(pos + y_len));
        pos += y_len;
        if (pos != bytes.size()) throw DecodeError("declared segment lengths do not cover the stream");
        return bs;
    }
};

}  // namespace dntsc

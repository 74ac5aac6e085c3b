#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "shardex/bytes.hpp"
#include "shardex/errors.hpp"

namespace shardex {

// Canonical wire encoding used for everything that is hashed, signed or
// persisted: each field is a 4-byte big-endian length followed by the raw
// bytes, fields in fixed declaration order. Integers are 8-byte big-endian
// two's complement. The layout is bijective and platform independent.

class Encoder {
public:
    Encoder& put_bytes(BytesView b);
    Encoder& put_str(std::string_view s) { return put_bytes(BytesView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())); }
    Encoder& put_u64(std::uint64_t v);
    Encoder& put_i64(std::int64_t v) { return put_u64(static_cast<std::uint64_t>(v)); }
    Encoder& put_bool(bool v) { return put_u64(v ? 1 : 0); }

    // Nested records are encoded as one opaque field.
    Encoder& put_nested(const Encoder& inner) { return put_bytes(view_of(inner.buf_)); }

    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

class DecodeError : public std::runtime_error {
public:
    explicit DecodeError(const std::string& what) : std::runtime_error(what) {}
};

class Decoder {
public:
    explicit Decoder(BytesView data) : data_(data) {}

    Bytes get_bytes();
    std::string get_str() { return to_string(view_of(last_ = get_bytes())); }
    std::uint64_t get_u64();
    std::int64_t get_i64() { return static_cast<std::int64_t>(get_u64()); }
    bool get_bool() { return get_u64() != 0; }

    bool at_end() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }
    void expect_end() const {
        if (!at_end()) throw DecodeError("trailing bytes after record");
    }

private:
    BytesView field();

    BytesView data_;
    std::size_t pos_ = 0;
    Bytes last_;
};

// 4-byte big-endian length framing for on-disk records and tcp frames.
void put_frame_len(Bytes& out, std::uint32_t len);
std::uint32_t read_frame_len(BytesView b, std::size_t pos);

} // namespace shardex

// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <mfr/serial.hpp>

#include <mfr/errors.hpp>

#include <zlib.h>

#include <bit>
#include <cstring>

namespace mfr {

namespace {

static_assert(std::endian::native == std::endian::little,
              "model containers are defined little-endian; add byte swapping for this platform");

uint32_t crc32_update(uint32_t crc, const void* data, size_t size) {
    return uint32_t(::crc32(crc, static_cast<const Bytef*>(data), uInt(size)));
}

}  // namespace

BinaryWriter::BinaryWriter(const std::filesystem::path& path)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw format_error("cannot open for writing: " + path.string());
}

void BinaryWriter::write_bytes(const void* data, size_t size) {
    out_.write(static_cast<const char*>(data), std::streamsize(size));
    crc_ = crc32_update(crc_, data, size);
}

void BinaryWriter::write_magic(const char magic[4]) { write_bytes(magic, 4); }

void BinaryWriter::write_u32(uint32_t v) { write_bytes(&v, 4); }

void BinaryWriter::write_f64(double v) { write_bytes(&v, 8); }

void BinaryWriter::write_f32_array(const float* data, size_t count) {
    write_bytes(data, count * 4);
}

void BinaryWriter::write_vector_f32(const Eigen::VectorXd& v) {
    std::vector<float> buf(static_cast<size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) buf[size_t(i)] = float(v[i]);
    write_f32_array(buf.data(), buf.size());
}

void BinaryWriter::write_matrix_f32(const Eigen::MatrixXd& m) {
    std::vector<float> col(static_cast<size_t>(m.rows()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) col[size_t(i)] = float(m(i, j));
        write_f32_array(col.data(), col.size());
    }
}

void BinaryWriter::finish() {
    if (finished_) return;
    uint32_t crc = crc_;
    out_.write(reinterpret_cast<const char*>(&crc), 4);
    out_.flush();
    if (!out_) throw format_error("write failed: " + path_.string());
    finished_ = true;
}

BinaryReader::BinaryReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw format_error("cannot open: " + path.string());
}

void BinaryReader::read_bytes(void* data, size_t size) {
    in_.read(static_cast<char*>(data), std::streamsize(size));
    if (size_t(in_.gcount()) != size) throw format_error("truncated file: " + path_.string());
    crc_ = crc32_update(crc_, data, size);
}

void BinaryReader::expect_magic(const char magic[4]) {
    char buf[4];
    read_bytes(buf, 4);
    if (std::memcmp(buf, magic, 4) != 0)
        throw format_error("bad magic in " + path_.string());
}

uint32_t BinaryReader::read_u32() {
    uint32_t v;
    read_bytes(&v, 4);
    return v;
}

double BinaryReader::read_f64() {
    double v;
    read_bytes(&v, 8);
    return v;
}

Eigen::VectorXd BinaryReader::read_vector_f32(Eigen::Index n) {
    std::vector<float> buf(static_cast<size_t>(n));
    read_bytes(buf.data(), buf.size() * 4);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = double(buf[size_t(i)]);
    return v;
}

Eigen::MatrixXd BinaryReader::read_matrix_f32(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    std::vector<float> col(static_cast<size_t>(rows));
    for (Eigen::Index j = 0; j < cols; ++j) {
        read_bytes(col.data(), col.size() * 4);
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = double(col[size_t(i)]);
    }
    return m;
}

void BinaryReader::check_crc() {
    uint32_t expected = crc_;  // read_u32 below would fold the trailer into crc_
    uint32_t stored;
    in_.read(reinterpret_cast<char*>(&stored), 4);
    if (in_.gcount() != 4) throw format_error("missing checksum trailer: " + path_.string());
    if (stored != expected) throw format_error("checksum mismatch: " + path_.string());
}

}  // namespace mfr

// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace mfr {

/// Little-endian binary writer that tracks a CRC32 of everything written,
/// appended as a 4-byte trailer by finish(). Model containers (MFRM, MFLM)
/// are built on top of this.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path);

    void write_bytes(const void* data, size_t size);
    void write_magic(const char magic[4]);
    void write_u32(uint32_t v);
    void write_f64(double v);
    void write_f32_array(const float* data, size_t count);
    void write_vector_f32(const Eigen::VectorXd& v);
    /// Column-major f32 dump.
    void write_matrix_f32(const Eigen::MatrixXd& m);

    /// Appends the CRC32 trailer and closes the stream.
    void finish();

private:
    std::ofstream out_;
    uint32_t crc_ = 0;
    bool finished_ = false;
    std::filesystem::path path_;
};

/// Counterpart reader; throws format_error on truncation, and
/// check_crc() validates the trailer against all bytes consumed so far.
class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path);

    void read_bytes(void* data, size_t size);
    void expect_magic(const char magic[4]);
    uint32_t read_u32();
    double read_f64();
    Eigen::VectorXd read_vector_f32(Eigen::Index n);
    Eigen::MatrixXd read_matrix_f32(Eigen::Index rows, Eigen::Index cols);
    void check_crc();

private:
    std::ifstream in_;
    uint32_t crc_ = 0;
    std::filesystem::path path_;
};

}  // namespace mfr

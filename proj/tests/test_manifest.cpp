#include <gtest/gtest.h>

#include <filesystem>

#include "flexfas/manifest.hpp"

using namespace flexfas;

namespace {

const std::string kHeader = "sample_id,split,dataset_id,label,pai,rgb_path,depth_path,ir_path\n";

ErrorCode parse_code(const std::string& text) {
  try {
    parse_manifest(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "parsed without error:\n" << text;
  return ErrorCode::kIoError;
}

}  // namespace

TEST(Manifest, ParsesOptionalColumns) {
  const auto m = parse_manifest(kHeader + "a,train,d1,bonafide,,a.ppm,a_d.pgm,\r\nb,test,d2,attack,print,b.ppm,,b_i.pgm\n");
  ASSERT_EQ(m.rows.size(), 2u);
  EXPECT_EQ(m.rows[0].split, Split::kTrain);
  EXPECT_FALSE(m.rows[0].pai.has_value());
  EXPECT_EQ(m.rows[0].depth_path, "a_d.pgm");
  EXPECT_FALSE(m.rows[0].ir_path.has_value());
  EXPECT_EQ(m.rows[1].label, Label::kAttack);
  EXPECT_EQ(m.rows[1].pai, "print");
  EXPECT_EQ(m.rows[1].dataset_id, "d2");
  EXPECT_FALSE(m.rows[1].depth_path.has_value());
}

TEST(Manifest, FormatParseRoundTrip) {
  const auto m = parse_manifest(kHeader + "a,val,d,bonafide,,a.ppm,a.pgm,ai.pgm\nb,train,d,attack,mask,b.ppm,,\n");
  EXPECT_EQ(parse_manifest(format_manifest(m)), m);
  EXPECT_EQ(format_manifest(parse_manifest(format_manifest(m))), format_manifest(m));
}

TEST(Manifest, MalformedInputsNameTheirError) {
  EXPECT_EQ(parse_code(""), ErrorCode::kParseError);
  EXPECT_EQ(parse_code("id,split\n"), ErrorCode::kParseError);
  EXPECT_EQ(parse_code(kHeader + "a,train,d,bonafide,,a.ppm,\n"), ErrorCode::kParseError);
  EXPECT_EQ(parse_code(kHeader + "a,dev,d,bonafide,,a.ppm,,\n"), ErrorCode::kParseError);
  EXPECT_EQ(parse_code(kHeader + "a,train,d,real,,a.ppm,,\n"), ErrorCode::kParseError);
  EXPECT_EQ(parse_code(kHeader + ",train,d,bonafide,,a.ppm,,\n"), ErrorCode::kParseError);
  EXPECT_EQ(parse_code(kHeader + "a,train,d,bonafide,,,a.pgm,\n"), ErrorCode::kMissingRgbPath);
  EXPECT_EQ(parse_code(kHeader + "a,train,d,bonafide,,a.ppm,,\na,test,d,attack,,b.ppm,,\n"), ErrorCode::kDuplicateId);
}

TEST(Manifest, ErrorsCarryLineNumbers) {
  try {
    parse_manifest(kHeader + "a,train,d,bonafide,,a.ppm,,\nb,oops,d,bonafide,,b.ppm,,\n", "m.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("m.csv:3"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MissingFileIsFileNotFound) {
  try {
    load_manifest("/nonexistent/flexfas/manifest.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFileNotFound);
  }
}

TEST(Manifest, SelectAndDatasetIds) {
  Dataset d(3);
  d[0].split = Split::kTrain;
  d[0].sample.dataset_id = "x";
  d[1].split = Split::kTest;
  d[1].sample.dataset_id = "y";
  d[2].split = Split::kTest;
  d[2].sample.dataset_id = "z";
  EXPECT_EQ(select(d, Split::kTest).size(), 2u);
  EXPECT_EQ(select(d, Split::kTest)[0], &d[1].sample);
  EXPECT_EQ(dataset_ids(d, Split::kTest), (std::set<std::string>{"y", "z"}));
  EXPECT_TRUE(select(d, Split::kVal).empty());
}

TEST(Pnm, RoundTripIsWithinHalfQuantizationStep) {
  Tensor img({3, 2, 5});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i) / 29.0;
  const Tensor back = decode_pnm(encode_pnm(img), "t");
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 0.5 / 65535.0 + 1e-15);
}

TEST(Pnm, EightBitGrayscaleDecodes) {
  const std::string bytes = std::string("P5\n# comment\n2 1\n255\n") + char(0) + char(255);
  const Tensor t = decode_pnm(bytes, "t");
  EXPECT_EQ(t.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 1.0);
}

TEST(Pnm, BadFilesRejected) {
  EXPECT_THROW(decode_pnm("P3\n1 1\n255\n0 0 0", "t"), Error);
  EXPECT_THROW(decode_pnm("P5\n4 4\n255\nab", "t"), Error);
  EXPECT_THROW(decode_pnm("P5\nx y\n255\n", "t"), Error);
  EXPECT_THROW(encode_pnm(Tensor({2, 2, 2})), Error);
}

TEST(Io, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

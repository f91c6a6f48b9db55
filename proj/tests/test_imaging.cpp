#include "aerolabel/imaging.hpp"

#include <gtest/gtest.h>

#include "aerolabel/rng.hpp"
#include "support/testutil.hpp"

using namespace aerolabel;

namespace {

Raster random_raster(std::uint64_t seed, int w, int h, int channels) {
  Raster r = Raster::filled(w, h, channels, 0);
  auto rng = make_rng(seed);
  for (auto& v : r.data) v = static_cast<std::uint8_t>(uniform_below(rng, 256));
  return r;
}

}  // namespace

TEST(Imaging, PngRoundTripIsLossless) {
  testutil::TempDir tmp("png");
  const Raster r = random_raster(1, 2, 2, 3);
  save_image(r, tmp.path() / "t.png");
  EXPECT_EQ(load_image(tmp.path() / "t.png"), r);

  const Raster rgba = random_raster(2, 5, 3, 4);
  save_image(rgba, tmp.path() / "t4.png");
  EXPECT_EQ(load_image(tmp.path() / "t4.png"), rgba);
}

TEST(Imaging, MissingFileAndBadFormat) {
  testutil::TempDir tmp("io");
  try {
    load_image(tmp.path() / "absent.png");
    FAIL() << "expected io error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  testutil::write_file(tmp.path() / "t.bmp", "notanimage");
  EXPECT_THROW(load_image(tmp.path() / "t.bmp"), Error);
}

TEST(Imaging, JpegLoadHasThreeChannels) {
  testutil::TempDir tmp("jpeg");
  const Raster r = Raster::filled(64, 48, 3, 128);
  save_image(r, tmp.path() / "t.jpg");
  const Raster back = load_image(tmp.path() / "t.jpg");
  EXPECT_EQ(back.width, 64);
  EXPECT_EQ(back.height, 48);
  EXPECT_EQ(back.channels, 3);
}

TEST(Imaging, Crop) {
  const Raster r = random_raster(3, 8, 6, 3);
  EXPECT_EQ(crop(r, r.bounds()), r);
  const Raster px = crop(r, {0, 0, 1, 1});
  EXPECT_EQ(px.width, 1);
  EXPECT_EQ(px.height, 1);
  EXPECT_EQ(px.pixel(0, 0)[0], r.pixel(0, 0)[0]);
  EXPECT_THROW(crop(r, {0, 0, 9, 6}), Error);
  EXPECT_THROW(crop(r, {2, 2, 2, 2}), Error);

  const Raster inner = crop(r, {2, 1, 5, 4});
  for (int y = 0; y < inner.height; ++y) {
    for (int x = 0; x < inner.width; ++x) {
      EXPECT_EQ(inner.pixel(x, y)[1], r.pixel(x + 2, y + 1)[1]);
    }
  }
}

TEST(Imaging, Resize) {
  const Raster r = random_raster(4, 10, 10, 3);
  EXPECT_EQ(resize(r, 10, 10), r);

  const Raster constant = Raster::filled(2, 2, 3, 77);
  const Raster grown = resize(constant, 4, 4);
  for (const auto v : grown.data) EXPECT_EQ(v, 77);

  const Raster wide = resize(r, 20, 10);
  EXPECT_EQ(wide.width, 20);
  EXPECT_EQ(wide.height, 10);
  EXPECT_THROW(resize(r, 0, 4), Error);
}

TEST(Imaging, ResizePreservesConstantImages) {
  auto rng = make_rng(9);
  for (int i = 0; i < 20; ++i) {
    const int w = static_cast<int>(uniform_int(rng, 1, 24));
    const int h = static_cast<int>(uniform_int(rng, 1, 24));
    const auto value = static_cast<std::uint8_t>(uniform_below(rng, 256));
    const Raster c = Raster::filled(w, h, 3, value);
    const Raster out = resize(c, static_cast<int>(uniform_int(rng, 1, 40)),
                              static_cast<int>(uniform_int(rng, 1, 40)));
    for (const auto v : out.data) ASSERT_EQ(v, value);
  }
}

TEST(Imaging, CompositeTransparentAndOpaque) {
  const Raster base = random_raster(5, 12, 12, 3);

  Raster clear = Raster::filled(4, 4, 4, 200);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) clear.pixel(x, y)[3] = 0;
  }
  clear.pixel(1, 1)[3] = 255;  // single opaque pixel for a valid crop
  MaskedCrop crop_clear = make_masked_crop(clear);
  crop_clear.raster.pixel(1, 1)[3] = 0;  // now fully transparent
  EXPECT_EQ(composite(base, crop_clear, 3, 3), base);

  const Raster opaque_src = random_raster(6, 4, 4, 3);
  Raster opaque = Raster::filled(4, 4, 4, 0);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const std::uint8_t* s = opaque_src.pixel(x, y);
      std::uint8_t* d = opaque.pixel(x, y);
      d[0] = s[0];
      d[1] = s[1];
      d[2] = s[2];
      d[3] = 255;
    }
  }
  const MaskedCrop crop_opaque = make_masked_crop(opaque);
  const Raster out = composite(base, crop_opaque, 2, 5);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      EXPECT_EQ(out.pixel(x + 2, y + 5)[0], opaque_src.pixel(x, y)[0]);
    }
  }
  EXPECT_THROW(composite(base, crop_opaque, 10, 10), Error);
}

TEST(Imaging, CompositeHalfAlphaMatchesBlendArithmetic) {
  const Raster base = Raster::filled(8, 8, 3, 0);  // black
  Raster half = Raster::filled(4, 4, 4, 255);      // white
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) half.pixel(x, y)[3] = 128;
  }
  const Raster out = composite(base, make_masked_crop(half), 1, 1);
  // Per-pixel oracle: (255*128 + 0*127 + 127) / 255 = 128 (rounded).
  const int expected = (255 * 128 + 0 * 127 + 127) / 255;
  for (int y = 1; y < 5; ++y) {
    for (int x = 1; x < 5; ++x) {
      EXPECT_NEAR(out.pixel(x, y)[0], expected, 1);
    }
  }
}

TEST(Imaging, CompositeLeavesOutsidePixelsIdentical) {
  const Raster base = random_raster(7, 16, 16, 3);
  Raster patch = random_raster(8, 5, 5, 4);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) {
      patch.pixel(x, y)[3] = (x + y) % 2 ? 255 : 0;
    }
  }
  const Raster out = composite(base, make_masked_crop(patch), 4, 6);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const bool inside = x >= 4 && x < 9 && y >= 6 && y < 11;
      if (!inside) {
        ASSERT_EQ(out.pixel(x, y)[0], base.pixel(x, y)[0]);
        ASSERT_EQ(out.pixel(x, y)[2], base.pixel(x, y)[2]);
      }
    }
  }
}

TEST(Imaging, CropRecoversOpaqueComposite) {
  const Raster base = random_raster(9, 20, 20, 3);
  Raster obj = random_raster(10, 6, 3, 4);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 6; ++x) obj.pixel(x, y)[3] = 255;
  }
  const MaskedCrop mc = make_masked_crop(obj);
  const Raster out = composite(base, mc, 7, 11);
  const Raster recovered = crop(out, {7, 11, 13, 14});
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 6; ++x) {
      ASSERT_EQ(recovered.pixel(x, y)[0], obj.pixel(x, y)[0]);
      ASSERT_EQ(recovered.pixel(x, y)[1], obj.pixel(x, y)[1]);
      ASSERT_EQ(recovered.pixel(x, y)[2], obj.pixel(x, y)[2]);
    }
  }
}

TEST(Imaging, OpaqueExtentIsTight) {
  Raster r = Raster::filled(10, 8, 4, 0);
  r.pixel(3, 2)[3] = 10;
  r.pixel(7, 5)[3] = 255;
  EXPECT_EQ(opaque_extent(r), (BoundingBox{3, 2, 8, 6}));
  const MaskedCrop mc = make_masked_crop(r);
  EXPECT_EQ(mc.tight_box, (BoundingBox{3, 2, 8, 6}));

  const Raster empty = Raster::filled(4, 4, 4, 0);
  EXPECT_THROW(opaque_extent(empty), Error);
  EXPECT_THROW(make_masked_crop(Raster::filled(4, 4, 3, 1)), Error);
}

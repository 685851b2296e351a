# Rolling-shutter line bundle adjustment

# misr4d - multi-view super-resolution for low-dose 4D-STEM

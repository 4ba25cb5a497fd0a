# Two samples with two dimensions and unequal lengths.
@problemName TwoSamples
@timeStamps false
@missing false
@univariate false
@dimensions 2
@equalLength false
@classLabel true a b
@data
1.0,2.0,3.0:4.0,5.0,6.0:a
-1.5,2.5:0.25,1e3:b
